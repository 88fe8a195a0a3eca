#include <algorithm>
#include <cmath>
#include <future>

#include "wbfuse/landscape.hpp"

namespace wbfuse {

namespace {

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        s += a[k] * b[k];
    }
    return s;
}

std::vector<double> diff(std::span<const double> a, std::span<const double> b)
{
    std::vector<double> d(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        d[k] = a[k] - b[k];
    }
    return d;
}

// w -= <w, u> u
void remove_component(std::vector<double>& w, std::span<const double> u)
{
    const double c = dot(w, u);
    for (std::size_t k = 0; k < w.size(); ++k) {
        w[k] -= c * u[k];
    }
}

void normalize(std::vector<double>& w)
{
    const double n = std::sqrt(dot(w, w));
    for (double& x : w) {
        x /= n;
    }
}

std::vector<double> linspace(double lo, double hi, std::size_t n)
{
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = k + 1 == n ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
    }
    return out;
}

double error_at(const Model& shape_template, std::span<const double> theta, const Dataset& data)
{
    return error_rate(unflatten(shape_template, theta), data);
}

} // namespace

std::vector<double> Plane::point(double x, double y) const
{
    std::vector<double> p(origin.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = origin[k] + x * u[k] + y * v[k];
    }
    return p;
}

Plane make_plane(std::span<const double> a, std::span<const double> b, std::span<const double> c)
{
    require(!a.empty() && a.size() == b.size() && a.size() == c.size(),
            "make_plane: anchors must be non-empty vectors of equal length");
    Plane p;
    p.origin.assign(a.begin(), a.end());
    p.u = diff(b, a);
    const double ab = std::sqrt(dot(p.u, p.u));
    const double scale = std::max(1.0, std::sqrt(dot(a, a)));
    require(ab > 1e-12 * scale, "make_plane: the first two anchors coincide");
    normalize(p.u);

    const std::vector<double> ac = diff(c, a);
    p.v = ac;
    remove_component(p.v, p.u);
    remove_component(p.v, p.u);
    const double off = std::sqrt(dot(p.v, p.v));
    require(off > 1e-9 * std::max(ab, std::sqrt(dot(ac, ac))), "make_plane: the three anchors are collinear");
    normalize(p.v);

    p.anchors[0] = {0.0, 0.0};
    p.anchors[1] = {ab, 0.0};
    p.anchors[2] = {dot(ac, p.u), dot(ac, p.v)};
    return p;
}

GridBounds default_bounds(const Plane& plane, double margin)
{
    GridBounds b{plane.anchors[0][0], plane.anchors[0][0], plane.anchors[0][1], plane.anchors[0][1]};
    for (const auto& xy : plane.anchors) {
        b.x_min = std::min(b.x_min, xy[0]);
        b.x_max = std::max(b.x_max, xy[0]);
        b.y_min = std::min(b.y_min, xy[1]);
        b.y_max = std::max(b.y_max, xy[1]);
    }
    const double dx = b.x_max - b.x_min;
    const double dy = b.y_max - b.y_min;
    b.x_min -= margin * dx;
    b.x_max += margin * dx;
    b.y_min -= margin * dy;
    b.y_max += margin * dy;
    return b;
}

PlaneGrid grid_eval(const Plane& plane, const Model& shape_template, const Dataset& data, std::size_t rows,
                    std::size_t cols, std::optional<GridBounds> bounds, std::size_t threads)
{
    require(rows >= 2 && cols >= 2, "grid_eval: need at least 2 x 2 grid points");
    require(plane.origin.size() == parameter_count(shape_template),
            "grid_eval: plane has " + std::to_string(plane.origin.size()) + " coordinates, model has " +
                std::to_string(parameter_count(shape_template)) + " parameters");
    const GridBounds b = bounds.value_or(default_bounds(plane));
    require(b.x_min < b.x_max && b.y_min < b.y_max, "grid_eval: empty bounds");
    for (const auto& xy : plane.anchors) {
        require(xy[0] >= b.x_min && xy[0] <= b.x_max && xy[1] >= b.y_min && xy[1] <= b.y_max,
                "grid_eval: bounds do not contain every anchor");
    }
    PlaneGrid g;
    g.plane = plane;
    g.xs = linspace(b.x_min, b.x_max, cols);
    g.ys = linspace(b.y_min, b.y_max, rows);
    g.error = Matrix(rows, cols);
    auto fill_row = [&](std::size_t r) {
        for (std::size_t c = 0; c < cols; ++c) {
            g.error(r, c) = error_at(shape_template, plane.point(g.xs[c], g.ys[r]), data);
        }
    };
    threads = std::max<std::size_t>(1, threads);
    for (std::size_t start = 0; start < rows; start += threads) {
        std::vector<std::future<void>> jobs;
        for (std::size_t r = start; r < std::min(rows, start + threads); ++r) {
            jobs.push_back(std::async(threads == 1 ? std::launch::deferred : std::launch::async, fill_row, r));
        }
        for (auto& j : jobs) {
            j.get();
        }
    }
    return g;
}

void write_grid_csv(const PlaneGrid& grid, std::ostream& out, const std::array<std::string, 3>& anchor_names)
{
    const auto precision = out.precision(17);
    out << "x,y,error\n";
    for (std::size_t r = 0; r < grid.ys.size(); ++r) {
        for (std::size_t c = 0; c < grid.xs.size(); ++c) {
            out << grid.xs[c] << ',' << grid.ys[r] << ',' << grid.error(r, c) << '\n';
        }
    }
    for (std::size_t k = 0; k < 3; ++k) {
        out << "#anchor," << anchor_names[k] << ',' << grid.plane.anchors[k][0] << ',' << grid.plane.anchors[k][1]
            << '\n';
    }
    out.precision(precision);
}

std::vector<double> path_errors(std::span<const double> a, std::span<const double> b, const Model& shape_template,
                                const Dataset& data, std::size_t steps)
{
    require(steps >= 2, "barrier: steps must be at least 2");
    require(a.size() == b.size() && a.size() == parameter_count(shape_template),
            "barrier: endpoints must match the model's parameter count");
    std::vector<double> errors;
    std::vector<double> theta(a.size());
    for (std::size_t s = 0; s < steps; ++s) {
        const double t = static_cast<double>(s) / static_cast<double>(steps - 1);
        for (std::size_t k = 0; k < a.size(); ++k) {
            theta[k] = s + 1 == steps ? b[k] : (1.0 - t) * a[k] + t * b[k];
        }
        errors.push_back(error_at(shape_template, theta, data));
    }
    return errors;
}

double segment_barrier(std::span<const double> a, std::span<const double> b, const Model& shape_template,
                       const Dataset& data, std::size_t steps)
{
    const std::vector<double> e = path_errors(a, b, shape_template, data, steps);
    const double top = *std::max_element(e.begin(), e.end());
    return top - std::max(e.front(), e.back());
}

} // namespace wbfuse
