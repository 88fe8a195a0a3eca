#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wbfuse/eval.hpp"
#include "wbfuse/matrix.hpp"
#include "wbfuse/model.hpp"

namespace wbfuse {

/// The 2D affine plane through three flattened weight vectors a, b, c:
/// origin a, u along b - a, v the part of c - a orthogonal to u.
struct Plane {
    std::vector<double> origin;
    std::vector<double> u;
    std::vector<double> v;
    /// (x, y) of a, b and c in the plane.
    std::array<std::array<double, 2>, 3> anchors{};

    std::vector<double> point(double x, double y) const;
};

/// Throws ContractViolation when the anchors are collinear (or coincide).
Plane make_plane(std::span<const double> a, std::span<const double> b, std::span<const double> c);

struct GridBounds {
    double x_min = 0.0;
    double x_max = 0.0;
    double y_min = 0.0;
    double y_max = 0.0;
};

/// Bounding box of the anchors widened by `margin` of its extent per side.
GridBounds default_bounds(const Plane& plane, double margin = 0.4);

struct PlaneGrid {
    Plane plane;
    std::vector<double> xs;  // cols
    std::vector<double> ys;  // rows
    /// error(r, c): test error at (xs[c], ys[r]).
    Matrix error;
};

/// Test error of `shape_template` with its weights replaced by every grid
/// point. Bounds default to default_bounds(plane) and must contain the
/// anchors.
PlaneGrid grid_eval(const Plane& plane, const Model& shape_template, const Dataset& data, std::size_t rows = 25,
                    std::size_t cols = 25, std::optional<GridBounds> bounds = std::nullopt, std::size_t threads = 1);

/// Header x,y,error, one row per grid point, then #anchor,name,x,y lines.
void write_grid_csv(const PlaneGrid& grid, std::ostream& out,
                    const std::array<std::string, 3>& anchor_names = {"model1", "model2", "aligned2"});

/// Errors at (1 - t) a + t b for `steps` evenly spaced t in [0, 1].
std::vector<double> path_errors(std::span<const double> a, std::span<const double> b, const Model& shape_template,
                                const Dataset& data, std::size_t steps);

/// max_t error(t) - max(error(0), error(1)) along the straight path.
double segment_barrier(std::span<const double> a, std::span<const double> b, const Model& shape_template,
                       const Dataset& data, std::size_t steps);

} // namespace wbfuse
