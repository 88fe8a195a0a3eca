#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "wbfuse/eval.hpp"

namespace wbfuse {

namespace {

using Vec = std::vector<double>;

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double activate(Activation a, double z)
{
    return a == Activation::relu ? std::max(0.0, z) : std::tanh(z);
}

// Derivative of the activation from its input z and output y.
double activate_grad(Activation a, double z, double y)
{
    return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - y * y;
}

double sigmoid(double x)
{
    return 1.0 / (1.0 + std::exp(-x));
}

Vec affine(const Matrix& w, std::span<const double> b, std::span<const double> x)
{
    Vec z = matvec(w, x);
    for (std::size_t j = 0; j < z.size(); ++j) {
        z[j] += b[j];
    }
    return z;
}

// z += W x
void add_matvec(Vec& z, const Matrix& w, std::span<const double> x)
{
    for (std::size_t j = 0; j < w.rows(); ++j) {
        double s = 0.0;
        const auto row = w.row(j);
        for (std::size_t k = 0; k < x.size(); ++k) {
            s += row[k] * x[k];
        }
        z[j] += s;
    }
}

// g += dz x^T
void add_outer(Matrix& g, std::span<const double> dz, std::span<const double> x)
{
    for (std::size_t j = 0; j < dz.size(); ++j) {
        if (dz[j] == 0.0) {
            continue;
        }
        auto row = g.row(j);
        for (std::size_t k = 0; k < x.size(); ++k) {
            row[k] += dz[j] * x[k];
        }
    }
}

// out += W^T dz
void add_transposed(Vec& out, const Matrix& w, std::span<const double> dz)
{
    for (std::size_t j = 0; j < w.rows(); ++j) {
        if (dz[j] == 0.0) {
            continue;
        }
        const auto row = w.row(j);
        for (std::size_t k = 0; k < out.size(); ++k) {
            out[k] += row[k] * dz[j];
        }
    }
}

void add_to(std::vector<double>& a, std::span<const double> b)
{
    for (std::size_t k = 0; k < a.size(); ++k) {
        a[k] += b[k];
    }
}

struct Spatial {
    std::size_t h = 1;
    std::size_t w = 1;
};

// Stride-1 "same" cross-correlation plus bias; channel-major layout.
Vec conv_apply(const ConvLayer& l, std::span<const double> x, Spatial s)
{
    const std::size_t k = l.filters.kernel();
    const std::size_t half = k / 2;
    const std::size_t hw = s.h * s.w;
    Vec z(l.out() * hw);
    for (std::size_t o = 0; o < l.out(); ++o) {
        for (std::size_t y = 0; y < s.h; ++y) {
            for (std::size_t xx = 0; xx < s.w; ++xx) {
                double acc = l.bias[o];
                for (std::size_t i = 0; i < l.in(); ++i) {
                    for (std::size_t r = 0; r < k; ++r) {
                        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + r) - static_cast<std::ptrdiff_t>(half);
                        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(s.h)) {
                            continue;
                        }
                        for (std::size_t c = 0; c < k; ++c) {
                            const std::ptrdiff_t xc =
                                static_cast<std::ptrdiff_t>(xx + c) - static_cast<std::ptrdiff_t>(half);
                            if (xc < 0 || xc >= static_cast<std::ptrdiff_t>(s.w)) {
                                continue;
                            }
                            acc += l.filters(o, i, r, c) * x[i * hw + static_cast<std::size_t>(yy) * s.w +
                                                            static_cast<std::size_t>(xc)];
                        }
                    }
                }
                z[o * hw + y * s.w + xx] = acc;
            }
        }
    }
    return z;
}

void conv_backward(const ConvLayer& l, std::span<const double> x, std::span<const double> dz, Spatial s,
                   ConvLayer& g, Vec* dx)
{
    const std::size_t k = l.filters.kernel();
    const std::size_t half = k / 2;
    const std::size_t hw = s.h * s.w;
    for (std::size_t o = 0; o < l.out(); ++o) {
        for (std::size_t y = 0; y < s.h; ++y) {
            for (std::size_t xx = 0; xx < s.w; ++xx) {
                const double d = dz[o * hw + y * s.w + xx];
                if (d == 0.0) {
                    continue;
                }
                g.bias[o] += d;
                for (std::size_t i = 0; i < l.in(); ++i) {
                    for (std::size_t r = 0; r < k; ++r) {
                        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + r) - static_cast<std::ptrdiff_t>(half);
                        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(s.h)) {
                            continue;
                        }
                        for (std::size_t c = 0; c < k; ++c) {
                            const std::ptrdiff_t xc =
                                static_cast<std::ptrdiff_t>(xx + c) - static_cast<std::ptrdiff_t>(half);
                            if (xc < 0 || xc >= static_cast<std::ptrdiff_t>(s.w)) {
                                continue;
                            }
                            const std::size_t q =
                                i * hw + static_cast<std::size_t>(yy) * s.w + static_cast<std::size_t>(xc);
                            g.filters(o, i, r, c) += d * x[q];
                            if (dx != nullptr) {
                                (*dx)[q] += d * l.filters(o, i, r, c);
                            }
                        }
                    }
                }
            }
        }
    }
}

// Activations of the non-recurrent layers [first, end) for one input.
struct FeedCache {
    std::size_t first = 0;
    /// Per layer: the input and pre-activation of each affine stage (one
    /// stage, or one per inner layer of a residual block).
    std::vector<std::vector<Vec>> inputs;
    std::vector<std::vector<Vec>> pre;
    std::vector<Vec> out;
};

class Network {
public:
    explicit Network(const Model& m) : m_(m)
    {
        if (m.arch == ArchTag::cnn) {
            spatial_ = {m.input_shape.at(1), m.input_shape.at(2)};
        }
        while (recurrent_ < m.layers.size() && (std::holds_alternative<RecurrentLayer>(m.layers[recurrent_]) ||
                                                std::holds_alternative<LstmLayer>(m.layers[recurrent_]))) {
            ++recurrent_;
        }
    }

    bool sequential() const { return recurrent_ > 0; }
    std::size_t recurrent_layers() const { return recurrent_; }

    FeedCache feed(std::size_t first, Vec x) const
    {
        const std::size_t n = m_.layers.size();
        FeedCache c;
        c.first = first;
        c.inputs.resize(n);
        c.pre.resize(n);
        c.out.resize(n);
        const Activation act = m_.activation();
        for (std::size_t l = first; l < n; ++l) {
            const Vec& in = l == first ? x : c.out[l - 1];
            const bool head = l + 1 == n;
            std::visit(Overloaded{
                           [&](const DenseLayer& d) {
                               Vec z = affine(d.weight, d.bias, in);
                               Vec y = z;
                               if (!head) {
                                   for (double& v : y) {
                                       v = activate(act, v);
                                   }
                               }
                               c.inputs[l] = {in};
                               c.pre[l] = {std::move(z)};
                               c.out[l] = std::move(y);
                           },
                           [&](const ConvLayer& conv) {
                               Vec z = conv_apply(conv, in, spatial_);
                               Vec y = z;
                               for (double& v : y) {
                                   v = std::max(0.0, v);
                               }
                               c.inputs[l] = {in};
                               c.pre[l] = {std::move(z)};
                               c.out[l] = std::move(y);
                           },
                           [&](const ResidualBlock& b) {
                               Vec a = in;
                               for (std::size_t k = 0; k < b.inner.size(); ++k) {
                                   Vec z = affine(b.inner[k].weight, b.inner[k].bias, a);
                                   if (k + 1 == b.inner.size()) {
                                       add_to(z, c.out.at(b.skip_source));
                                   }
                                   c.inputs[l].push_back(std::move(a));
                                   a = z;
                                   for (double& v : a) {
                                       v = std::max(0.0, v);
                                   }
                                   c.pre[l].push_back(std::move(z));
                               }
                               c.out[l] = std::move(a);
                           },
                           [&](const auto&) { throw ContractViolation("forward: recurrent layer after dense layers"); },
                       },
                       m_.layers[l]);
        }
        return c;
    }

    // Accumulates parameter gradients for d(loss)/d(logits) = dout and
    // returns the gradient with respect to the input of layer c.first.
    Vec feed_backward(const FeedCache& c, Vec dout, Model& grad) const
    {
        const std::size_t n = m_.layers.size();
        std::vector<Vec> g(n);
        g[n - 1] = std::move(dout);
        const Activation act = m_.activation();
        Vec dx;
        for (std::size_t l = n; l-- > c.first;) {
            const bool head = l + 1 == n;
            Vec& gl = g[l];
            if (gl.empty()) {
                gl.assign(c.out[l].size(), 0.0);
            }
            auto pass_down = [&](Vec d) {
                if (l == c.first) {
                    dx = std::move(d);
                } else if (g[l - 1].empty()) {
                    g[l - 1] = std::move(d);
                } else {
                    add_to(g[l - 1], d);
                }
            };
            std::visit(Overloaded{
                           [&](const DenseLayer& d) {
                               auto& gd = std::get<DenseLayer>(grad.layers[l]);
                               Vec dz = gl;
                               if (!head) {
                                   for (std::size_t j = 0; j < dz.size(); ++j) {
                                       dz[j] *= activate_grad(act, c.pre[l][0][j], c.out[l][j]);
                                   }
                               }
                               add_outer(gd.weight, dz, c.inputs[l][0]);
                               add_to(gd.bias, dz);
                               Vec down(d.in(), 0.0);
                               add_transposed(down, d.weight, dz);
                               pass_down(std::move(down));
                           },
                           [&](const ConvLayer& conv) {
                               auto& gc = std::get<ConvLayer>(grad.layers[l]);
                               Vec dz = gl;
                               for (std::size_t j = 0; j < dz.size(); ++j) {
                                   dz[j] = c.pre[l][0][j] > 0.0 ? dz[j] : 0.0;
                               }
                               Vec down(c.inputs[l][0].size(), 0.0);
                               conv_backward(conv, c.inputs[l][0], dz, spatial_, gc, &down);
                               pass_down(std::move(down));
                           },
                           [&](const ResidualBlock& b) {
                               auto& gb = std::get<ResidualBlock>(grad.layers[l]);
                               Vec da = gl;
                               for (std::size_t k = b.inner.size(); k-- > 0;) {
                                   Vec dz = da;
                                   for (std::size_t j = 0; j < dz.size(); ++j) {
                                       dz[j] = c.pre[l][k][j] > 0.0 ? dz[j] : 0.0;
                                   }
                                   if (k + 1 == b.inner.size()) {
                                       Vec& gs = g[b.skip_source];
                                       if (gs.empty()) {
                                           gs = dz;
                                       } else {
                                           add_to(gs, dz);
                                       }
                                   }
                                   add_outer(gb.inner[k].weight, dz, c.inputs[l][k]);
                                   add_to(gb.inner[k].bias, dz);
                                   da.assign(b.inner[k].in(), 0.0);
                                   add_transposed(da, b.inner[k].weight, dz);
                               }
                               pass_down(std::move(da));
                           },
                           [&](const auto&) {},
                       },
                       m_.layers[l]);
        }
        return dx;
    }

    // Hidden states of every recurrent layer over the sequence.
    struct SeqCache {
        /// xs[r][t]: input of recurrent layer r at step t.
        std::vector<std::vector<Vec>> xs;
        /// hs[r][t]: state after step t (hs[r][0] is the zero state).
        std::vector<std::vector<Vec>> hs;
        /// LSTM only: cs[r][t] cell state, gates[r][t][q] gate activations.
        std::vector<std::vector<Vec>> cs;
        std::vector<std::vector<std::array<Vec, 4>>> gates;
    };

    SeqCache run_sequence(std::span<const double> input) const
    {
        const std::size_t d = m_.input_dim;
        require(!input.empty() && input.size() % d == 0,
                "forward: sequence length " + std::to_string(input.size()) + " is not a multiple of input_dim " +
                    std::to_string(d));
        const std::size_t steps = input.size() / d;
        SeqCache s;
        std::vector<Vec> xs(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            xs[t].assign(input.begin() + static_cast<std::ptrdiff_t>(t * d),
                         input.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
        }
        for (std::size_t r = 0; r < recurrent_; ++r) {
            s.xs.push_back(xs);
            std::vector<Vec> hs(steps + 1);
            std::vector<Vec> cs;
            std::vector<std::array<Vec, 4>> gates;
            if (const auto* rnn = std::get_if<RecurrentLayer>(&m_.layers[r])) {
                hs[0].assign(rnn->hidden(), 0.0);
                for (std::size_t t = 0; t < steps; ++t) {
                    Vec z = affine(rnn->input_weight, rnn->bias, xs[t]);
                    add_matvec(z, rnn->hidden_weight, hs[t]);
                    for (double& v : z) {
                        v = std::tanh(v);
                    }
                    hs[t + 1] = std::move(z);
                }
            } else {
                const auto& lstm = std::get<LstmLayer>(m_.layers[r]);
                const std::size_t h = lstm.hidden();
                hs[0].assign(h, 0.0);
                cs.assign(steps + 1, Vec(h, 0.0));
                gates.resize(steps + 1);
                for (std::size_t t = 0; t < steps; ++t) {
                    std::array<Vec, 4> a;
                    for (std::size_t q = 0; q < 4; ++q) {
                        const RecurrentLayer& gate = lstm.gates[q];
                        a[q] = affine(gate.input_weight, gate.bias, xs[t]);
                        add_matvec(a[q], gate.hidden_weight, hs[t]);
                        for (double& v : a[q]) {
                            v = q == static_cast<std::size_t>(Gate::cell) ? std::tanh(v) : sigmoid(v);
                        }
                    }
                    Vec hn(h);
                    for (std::size_t j = 0; j < h; ++j) {
                        cs[t + 1][j] = a[1][j] * cs[t][j] + a[0][j] * a[2][j];
                        hn[j] = a[3][j] * std::tanh(cs[t + 1][j]);
                    }
                    hs[t + 1] = std::move(hn);
                    gates[t + 1] = std::move(a);
                }
            }
            xs.assign(hs.begin() + 1, hs.end());
            s.hs.push_back(std::move(hs));
            s.cs.push_back(std::move(cs));
            s.gates.push_back(std::move(gates));
        }
        return s;
    }

    // dtop[t] (t = 1..T) is the loss gradient with respect to the state of the
    // last recurrent layer after step t.
    void sequence_backward(const SeqCache& s, std::vector<Vec> dtop, Model& grad) const
    {
        for (std::size_t r = recurrent_; r-- > 0;) {
            const std::size_t steps = s.xs[r].size();
            std::vector<Vec> dx(steps + 1);
            if (const auto* rnn = std::get_if<RecurrentLayer>(&m_.layers[r])) {
                auto& g = std::get<RecurrentLayer>(grad.layers[r]);
                Vec dnext(rnn->hidden(), 0.0);
                for (std::size_t t = steps; t >= 1; --t) {
                    Vec da = dnext;
                    if (!dtop[t].empty()) {
                        add_to(da, dtop[t]);
                    }
                    const Vec& h = s.hs[r][t];
                    for (std::size_t j = 0; j < da.size(); ++j) {
                        da[j] *= 1.0 - h[j] * h[j];
                    }
                    add_outer(g.input_weight, da, s.xs[r][t - 1]);
                    add_outer(g.hidden_weight, da, s.hs[r][t - 1]);
                    add_to(g.bias, da);
                    dx[t].assign(rnn->in(), 0.0);
                    add_transposed(dx[t], rnn->input_weight, da);
                    dnext.assign(rnn->hidden(), 0.0);
                    add_transposed(dnext, rnn->hidden_weight, da);
                }
            } else {
                const auto& lstm = std::get<LstmLayer>(m_.layers[r]);
                auto& g = std::get<LstmLayer>(grad.layers[r]);
                const std::size_t h = lstm.hidden();
                Vec dh_next(h, 0.0);
                Vec dc_next(h, 0.0);
                for (std::size_t t = steps; t >= 1; --t) {
                    const auto& a = s.gates[r][t];
                    const Vec& c = s.cs[r][t];
                    const Vec& c_prev = s.cs[r][t - 1];
                    std::array<Vec, 4> dpre;
                    for (auto& v : dpre) {
                        v.assign(h, 0.0);
                    }
                    for (std::size_t j = 0; j < h; ++j) {
                        const double dh = dh_next[j] + (dtop[t].empty() ? 0.0 : dtop[t][j]);
                        const double tc = std::tanh(c[j]);
                        const double dc = dh * a[3][j] * (1.0 - tc * tc) + dc_next[j];
                        dpre[0][j] = dc * a[2][j] * a[0][j] * (1.0 - a[0][j]);
                        dpre[1][j] = dc * c_prev[j] * a[1][j] * (1.0 - a[1][j]);
                        dpre[2][j] = dc * a[0][j] * (1.0 - a[2][j] * a[2][j]);
                        dpre[3][j] = dh * tc * a[3][j] * (1.0 - a[3][j]);
                        dc_next[j] = dc * a[1][j];
                    }
                    dx[t].assign(lstm.in(), 0.0);
                    dh_next.assign(h, 0.0);
                    for (std::size_t q = 0; q < 4; ++q) {
                        add_outer(g.gates[q].input_weight, dpre[q], s.xs[r][t - 1]);
                        add_outer(g.gates[q].hidden_weight, dpre[q], s.hs[r][t - 1]);
                        add_to(g.gates[q].bias, dpre[q]);
                        add_transposed(dx[t], lstm.gates[q].input_weight, dpre[q]);
                        add_transposed(dh_next, lstm.gates[q].hidden_weight, dpre[q]);
                    }
                }
            }
            dtop = std::move(dx);
        }
    }

private:
    const Model& m_;
    Spatial spatial_;
    std::size_t recurrent_ = 0;
};

// Softmax cross-entropy of one logit vector; writes the logit gradient.
double cross_entropy(std::span<const double> logits, std::size_t label, Vec& dlogits)
{
    require(label < logits.size(), "loss: label " + std::to_string(label) + " out of range for " +
                                       std::to_string(logits.size()) + " outputs");
    const double top = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    dlogits.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        dlogits[j] = std::exp(logits[j] - top);
        sum += dlogits[j];
    }
    for (double& v : dlogits) {
        v /= sum;
    }
    const double loss = -(logits[label] - top - std::log(sum));
    dlogits[label] -= 1.0;
    return loss;
}

void check_input(const Model& model, std::span<const double> input, bool sequential)
{
    if (!sequential) {
        require(input.size() == model.input_dim, "forward: input has " + std::to_string(input.size()) +
                                                     " features, model expects " + std::to_string(model.input_dim));
    }
    for (double v : input) {
        require(std::isfinite(v), "forward: input contains a non-finite value");
    }
}

} // namespace

std::vector<double> forward(const Model& model, std::span<const double> input)
{
    const Network net(model);
    check_input(model, input, net.sequential());
    if (!net.sequential()) {
        return net.feed(0, Vec(input.begin(), input.end())).out.back();
    }
    const auto seq = net.run_sequence(input);
    return net.feed(net.recurrent_layers(), seq.hs.back().back()).out.back();
}

std::size_t argmax(std::span<const double> logits)
{
    require(!logits.empty(), "argmax: no logits");
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j) {
        if (logits[j] > logits[best]) {
            best = j;
        }
    }
    return best;
}

double accuracy(const Model& model, const Dataset& data)
{
    require(data.size() > 0, "accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t s = 0; s < data.size(); ++s) {
        hits += argmax(forward(model, data.inputs[s])) == data.labels[s] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

double error_rate(const Model& model, const Dataset& data)
{
    return 1.0 - accuracy(model, data);
}

LossGradient loss_gradient(const Model& model, std::span<const double> input, std::size_t label,
                           std::span<const std::size_t> step_labels)
{
    const Network net(model);
    check_input(model, input, net.sequential());
    LossGradient out;
    out.gradient = zeros_like(model);
    Vec dlogits;
    if (!net.sequential()) {
        const FeedCache c = net.feed(0, Vec(input.begin(), input.end()));
        out.loss = cross_entropy(c.out.back(), label, dlogits);
        net.feed_backward(c, dlogits, out.gradient);
        return out;
    }
    const auto seq = net.run_sequence(input);
    const std::size_t steps = seq.hs.back().size() - 1;
    std::vector<Vec> dtop(steps + 1);
    if (step_labels.empty()) {
        const FeedCache c = net.feed(net.recurrent_layers(), seq.hs.back()[steps]);
        out.loss = cross_entropy(c.out.back(), label, dlogits);
        dtop[steps] = net.feed_backward(c, dlogits, out.gradient);
    } else {
        require(step_labels.size() == steps, "loss: " + std::to_string(step_labels.size()) + " step labels for " +
                                                 std::to_string(steps) + " steps");
        const double w = 1.0 / static_cast<double>(steps);
        for (std::size_t t = 1; t <= steps; ++t) {
            const FeedCache c = net.feed(net.recurrent_layers(), seq.hs.back()[t]);
            out.loss += w * cross_entropy(c.out.back(), step_labels[t - 1], dlogits);
            for (double& v : dlogits) {
                v *= w;
            }
            dtop[t] = net.feed_backward(c, dlogits, out.gradient);
        }
    }
    net.sequence_backward(seq, std::move(dtop), out.gradient);
    return out;
}

} // namespace wbfuse
