// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Tolerances and time limits are fixed here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "models.hpp"
#include "oracles.hpp"
#include "permute.hpp"
#include "tempdir.hpp"
#include "wbfuse/eval.hpp"
#include "wbfuse/fusion.hpp"
#include "wbfuse/landscape.hpp"
#include "wbfuse/mfir.hpp"
#include "wbfuse/tensor_product.hpp"

using namespace wbfuse;
using namespace wbfuse::testing;

namespace {

constexpr double kTensorRelTol = 1e-10;
constexpr double kMarginalTol = 1e-6;
constexpr double kBruteForceRelGap = 0.02;
constexpr double kRowMass = 0.99;
constexpr double kAlignedWeightTol = 1e-3;
constexpr double kSelfFusionTol = 1e-4;
constexpr double kMonotoneSlack = 1e-10;
constexpr double kFunctionalTol = 1e-3;
constexpr double kSharpEps = 1e-3;

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::size_t> inverse(const std::vector<std::size_t>& p)
{
    std::vector<std::size_t> inv(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        inv[p[i]] = i;
    }
    return inv;
}

double max_tensor_diff(const Model& a, const Model& b)
{
    const std::vector<double> x = flatten(a);
    const std::vector<double> y = flatten(b);
    if (x.size() != y.size()) {
        return INFINITY;
    }
    double d = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        d = std::max(d, std::abs(x[k] - y[k]));
    }
    return d;
}

double max_output_diff(const Model& a, const Model& b, std::mt19937_64& rng, int samples)
{
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        const std::vector<double> x = oracle::random_vector(a.input_dim, rng);
        const std::vector<double> ya = forward(a, x);
        const std::vector<double> yb = forward(b, x);
        for (std::size_t k = 0; k < ya.size(); ++k) {
            worst = std::max(worst, std::abs(ya[k] - yb[k]));
        }
    }
    return worst;
}

FusionConfig sharp_config()
{
    FusionConfig cfg;
    cfg.sinkhorn = SinkhornParams::for_epsilon(kSharpEps);
    cfg.init = InitPolicy{InitPolicy::Kind::copy_model, 0, 0, 0.0};
    return cfg;
}

GwbConfig sharp_gwb(double alpha)
{
    GwbConfig g;
    g.base = sharp_config();
    g.alpha_h = alpha;
    return g;
}

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi)
{
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Random weights and biases at std 0.5.
Model random_from(const ModelSpec& spec, std::mt19937_64& rng)
{
    Model m = build_model(spec, rng, InitParams{0.5});
    std::normal_distribution<double> dist(0.0, 0.5);
    for_each_tensor(m, [&](std::size_t, const std::string& name, const std::vector<std::size_t>&,
                           std::span<double> v) {
        if (name.ends_with("bias")) {
            for (double& x : v) {
                x = dist(rng);
            }
        }
    });
    return m;
}

std::string fmt(double v)
{
    std::ostringstream s;
    s.precision(3);
    s << v;
    return s.str();
}

Outcome tensor_oracle()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const std::size_t j = uniform(rng, 1, 12), g = uniform(rng, 1, 12);
        const std::size_t q = uniform(rng, 1, 12), s = uniform(rng, 1, 12);
        const Matrix a = oracle::random_matrix(j, q, rng);
        const Matrix b = oracle::random_matrix(g, s, rng);
        const Matrix pi = oracle::random_nonnegative(q, s, rng);
        worst = std::max(worst,
                         oracle::max_relative_error(sq_loss_tensor_apply(a, b, pi), oracle::naive_sq_loss(a, b, pi)));

        const std::size_t k = uniform(rng, 1, 3);
        const FilterBank fa = oracle::random_filters(j, q, k, rng);
        const FilterBank fb = oracle::random_filters(g, s, k, rng);
        worst = std::max(worst, oracle::max_relative_error(frobenius_loss_tensor_apply(fa, fb, pi),
                                                           oracle::naive_frobenius_loss(fa, fb, pi)));
    }
    const double t = seconds_since(t0);
    return {worst <= kTensorRelTol && t < 5.0,
            "200 instances per contraction, max rel error " + fmt(worst) + ", " + fmt(t) + " s"};
}

Outcome sinkhorn_checks()
{
    std::mt19937_64 rng(102);
    double worst_violation = 0.0;
    double worst_time = 0.0;
    for (int i = 0; i < 10; ++i) {
        const Matrix cost = oracle::random_nonnegative(50, 50, rng);
        const Histogram p = oracle::random_histogram(50, rng);
        const Histogram q = oracle::random_histogram(50, rng);
        const auto t0 = Clock::now();
        const Coupling c = sinkhorn(cost, p, q, SinkhornParams{});
        worst_time = std::max(worst_time, seconds_since(t0));
        worst_violation = std::max(worst_violation, marginal_violation(c.plan, p, q));
    }

    double worst_gap = 0.0;
    for (std::size_t n = 2; n <= 4; ++n) {
        const Histogram u(std::vector<double>(n, 1.0 / static_cast<double>(n)));
        for (int i = 0; i < 20; ++i) {
            const Matrix cost = oracle::random_nonnegative(n, n, rng);
            const double best = oracle::brute_force_assignment(cost).cost / static_cast<double>(n);
            const Coupling c = sinkhorn(cost, u, u, SinkhornParams::for_epsilon(kSharpEps));
            worst_gap = std::max(worst_gap, (transport_cost(cost, c.plan) - best) / best);
        }
    }
    return {worst_violation <= kMarginalTol && worst_time < 1.0 && worst_gap <= kBruteForceRelGap,
            "50x50 violation " + fmt(worst_violation) + " (slowest " + fmt(worst_time) +
                " s), n<=4 gap to brute force " + fmt(100.0 * worst_gap) + "%"};
}

struct Recovery {
    double min_mass = 1.0;
    double max_weight_err = 0.0;
};

Outcome wb_recovery()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(103);
    Recovery r;
    for (int trial = 0; trial < 20; ++trial) {
        ModelSpec spec;
        spec.arch = ArchTag::mlp;
        spec.input_dim = uniform(rng, 8, 16);
        spec.hidden = {uniform(rng, 4, 32), uniform(rng, 4, 32), uniform(rng, 4, 32)};
        spec.num_outputs = 3;
        const Model m = random_from(spec, rng);
        const PermutedCopy c = permuted_copy(m, rng);
        const Model pair[] = {m, c.model};
        const FusionResult f = wb_fuse_model(pair, sharp_config());
        for (std::size_t u = 0; u < c.perms.size(); ++u) {
            r.min_mass = std::min(r.min_mass, oracle::min_row_mass_on(f.couplings[1][u], inverse(c.perms[u])));
        }
        r.max_weight_err = std::max(r.max_weight_err, max_tensor_diff(align_model(c.model, f.couplings[1]), m));
    }
    const double t = seconds_since(t0);
    return {r.min_mass >= kRowMass && r.max_weight_err <= kAlignedWeightTol && t < 30.0,
            "20 MLPs, min row mass " + fmt(r.min_mass) + ", aligned weight error " + fmt(r.max_weight_err) + ", " +
                fmt(t) + " s"};
}

Outcome gwb_recovery()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(104);
    Recovery r;
    bool one_coupling_per_layer = true;
    for (ArchTag arch : {ArchTag::rnn, ArchTag::lstm}) {
        for (int trial = 0; trial < 20; ++trial) {
            ModelSpec spec;
            spec.arch = arch;
            spec.input_dim = uniform(rng, 2, 6);
            spec.hidden = {uniform(rng, 4, 32)};
            spec.num_outputs = 3;
            const Model m = random_from(spec, rng);
            const PermutedCopy c = permuted_copy(m, rng);
            const Model pair[] = {m, c.model};
            const FusionResult f = gwb_fuse_model(pair, sharp_gwb(5.0));
            // The LSTM gates share one coupling: one per fused layer.
            one_coupling_per_layer = one_coupling_per_layer && f.couplings[1].size() == m.layers.size();
            for (std::size_t u = 0; u < c.perms.size(); ++u) {
                r.min_mass = std::min(r.min_mass, oracle::min_row_mass_on(f.couplings[1][u], inverse(c.perms[u])));
            }
            r.max_weight_err =
                std::max(r.max_weight_err, max_tensor_diff(align_recurrent_model(c.model, f.couplings[1]), m));
        }
    }
    const double t = seconds_since(t0);
    return {r.min_mass >= kRowMass && r.max_weight_err <= kAlignedWeightTol && one_coupling_per_layer && t < 60.0,
            "20 RNN + 20 LSTM, min row mass " + fmt(r.min_mass) + ", aligned weight error " +
                fmt(r.max_weight_err) + ", " + fmt(t) + " s"};
}

Outcome self_fusion()
{
    std::mt19937_64 rng(105);
    double wb = 0.0;
    double gwb = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        for (ArchTag arch : kAllArchs) {
            const Model m = random_model(arch, rng);
            const Model pair[] = {m, m};
            wb = std::max(wb, max_tensor_diff(wb_fuse_model(pair, sharp_config()).fused, m));
            gwb = std::max(gwb, max_tensor_diff(gwb_fuse_model(pair, sharp_gwb(5.0)).fused, m));
        }
    }
    return {wb <= kSelfFusionTol && gwb <= kSelfFusionTol,
            "all archs, WB " + fmt(wb) + ", GWB " + fmt(gwb)};
}

Outcome monotonicity()
{
    std::mt19937_64 rng(106);
    double worst = -INFINITY;
    std::size_t updates = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const ArchTag arch = kAllArchs[static_cast<std::size_t>(trial) % std::size(kAllArchs)];
        const Model in[] = {random_model(arch, rng), random_model(arch, rng), random_model(arch, rng)};
        GwbConfig cfg;
        cfg.alpha_h = 2.0;
        cfg.base.init.seed = static_cast<std::uint64_t>(trial);
        const FusionResult r = trial % 2 == 0 ? wb_fuse_model(in, cfg.base) : gwb_fuse_model(in, cfg);
        for (const LayerTrace& t : r.trace) {
            for (const TraceStep& s : t.steps) {
                worst = std::max(worst, s.after_update - s.before_update);
                ++updates;
            }
        }
    }
    return {updates > 0 && worst <= kMonotoneSlack,
            std::to_string(updates) + " logged updates, largest increase " + fmt(worst)};
}

Outcome moons_direction()
{
    const auto t0 = Clock::now();
    const Dataset train_set = two_moons(1000, 1, 0.1, Split::train);
    const Dataset test_set = two_moons(1000, 2, 0.1, Split::test);
    ModelSpec spec;
    spec.arch = ArchTag::mlp;
    spec.input_dim = 2;
    spec.hidden = {16, 16};
    spec.num_outputs = 2;

    int votes = 0;
    std::ostringstream detail;
    for (std::uint64_t pair = 0; pair < 5; ++pair) {
        TrainConfig tc;
        tc.seed = 2 * pair + 1;
        const Model a = train(spec, train_set, tc);
        tc.seed = 2 * pair + 2;
        const Model b = train(spec, train_set, tc);
        const Model both[] = {a, b};

        const double acc_avg = accuracy(vanilla_average(both, std::vector<double>{0.5, 0.5}), test_set);
        const double acc_wb = accuracy(wb_fuse_model(both, FusionConfig{}).fused, test_set);
        const double base = 0.5 * (accuracy(a, test_set) + accuracy(b, test_set));
        const Model b_aligned = align_model(b, alignment_couplings(a, b, FusionConfig{}));
        const std::vector<double> fa = flatten(a);
        const double raw = segment_barrier(fa, flatten(b), a, test_set, 21);
        const double aligned = segment_barrier(fa, flatten(b_aligned), a, test_set, 21);

        const bool ok = acc_avg < acc_wb && acc_wb >= base - 0.10 && aligned <= raw;
        votes += ok ? 1 : 0;
        detail << (pair ? "; " : "") << "avg " << fmt(acc_avg) << " wb " << fmt(acc_wb) << " barrier "
               << fmt(aligned) << "/" << fmt(raw) << (ok ? "" : " x");
    }
    const double t = seconds_since(t0);
    return {votes >= 3 && t < 120.0, std::to_string(votes) + "/5 pairs (" + detail.str() + "), " + fmt(t) + " s"};
}

struct RecurrentRecipe {
    ArchTag arch;
    double lr;
};

Outcome parity_direction()
{
    const auto t0 = Clock::now();
    const Dataset train_set = sequence_parity(1000, 8, 11, Split::train);
    const Dataset val_set = sequence_parity(500, 8, 12, Split::val);
    const Dataset test_set = sequence_parity(1000, 8, 13, Split::test);

    bool pass = true;
    std::ostringstream detail;
    for (const RecurrentRecipe& recipe : {RecurrentRecipe{ArchTag::rnn, 0.1}, RecurrentRecipe{ArchTag::lstm, 0.3}}) {
        ModelSpec spec;
        spec.arch = recipe.arch;
        spec.input_dim = 1;
        spec.hidden = {16};
        spec.num_outputs = 2;
        int wins = 0;
        detail << (recipe.arch == ArchTag::rnn ? "" : "; ") << to_string(recipe.arch) << " gwb/wb";
        for (std::uint64_t pair = 0; pair < 5; ++pair) {
            TrainConfig tc;
            tc.lr = recipe.lr;
            tc.epochs = 60;
            tc.clip = 1.0;
            tc.seed = 2 * pair + 1;
            const Model a = train(spec, train_set, tc);
            tc.seed = 2 * pair + 2;
            const Model b = train(spec, train_set, tc);
            const Model both[] = {a, b};

            GwbConfig cfg;
            cfg.alpha_h = 0.0;
            const double acc_wb = accuracy(gwb_fuse_model(both, cfg).fused, test_set);
            double best_val = -1.0;
            double acc_gwb = 0.0;
            for (double alpha : {1.0, 5.0, 20.0}) {
                cfg.alpha_h = alpha;
                const Model fused = gwb_fuse_model(both, cfg).fused;
                const double v = accuracy(fused, val_set);
                if (v > best_val) {
                    best_val = v;
                    acc_gwb = accuracy(fused, test_set);
                }
            }
            wins += acc_gwb >= acc_wb ? 1 : 0;
            detail << " " << fmt(acc_gwb) << "/" << fmt(acc_wb) << " [base " << fmt(accuracy(a, test_set)) << ","
                   << fmt(accuracy(b, test_set)) << "]";
        }
        detail << " (" << wins << "/5)";
        pass = pass && wins >= 4;
    }
    const double t = seconds_since(t0);
    return {pass && t < 300.0, detail.str() + ", " + fmt(t) + " s"};
}

Outcome reduction_identity()
{
    std::mt19937_64 rng(109);
    bool same = true;
    int runs = 0;
    for (int trial = 0; trial < 3; ++trial) {
        for (ArchTag arch : kAllArchs) {
            const Model in[] = {random_model(arch, rng), random_model(arch, rng)};
            GwbConfig cfg;
            cfg.alpha_h = 0.0;
            cfg.base.init = InitPolicy{InitPolicy::Kind::random, 0, static_cast<std::uint64_t>(trial), 0.1};
            same = same && wb_fuse_model(in, cfg.base).couplings == gwb_fuse_model(in, cfg).couplings;
            ++runs;
        }
    }
    return {same, std::to_string(runs) + " fusions across all archs, couplings " +
                      (same ? "bit-identical" : "differ")};
}

Outcome resnet_policy()
{
    std::mt19937_64 rng(110);
    double worst = 0.0;
    bool shared = true;
    for (int trial = 0; trial < 10; ++trial) {
        ModelSpec spec;
        spec.arch = ArchTag::resmlp;
        spec.input_dim = uniform(rng, 4, 10);
        spec.hidden = {uniform(rng, 4, 12)};
        spec.residual_blocks = uniform(rng, 1, 3);
        spec.block_depth = uniform(rng, 1, 3);
        spec.num_outputs = 3;
        const Model m = random_from(spec, rng);
        const Model pair[] = {m, permuted_copy(m, rng).model};
        const FusionResult r = wb_fuse_model(pair, sharp_config());
        worst = std::max(worst, max_output_diff(m, r.fused, rng, 100));

        // Unit index of each layer's output, then every block output must
        // carry exactly its skip source's coupling.
        std::vector<std::size_t> last_unit(m.layers.size());
        std::size_t unit = 0;
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            const auto* block = std::get_if<ResidualBlock>(&m.layers[l]);
            unit += block ? block->inner.size() : 1;
            last_unit[l] = unit - 1;
            if (block) {
                for (const auto& per_input : r.couplings) {
                    shared = shared && per_input[last_unit[l]] == per_input[last_unit[block->skip_source]];
                }
            }
        }
    }
    return {worst <= kFunctionalTol && shared, "10 residual MLPs, output error " + fmt(worst) +
                                                   ", skip-set couplings " + (shared ? "identical" : "differ")};
}

Outcome format_round_trip()
{
    std::mt19937_64 rng(111);
    TempDir dir;
    int failures = 0;
    int total = 0;
    for (ArchTag arch : kAllArchs) {
        for (int i = 0; i < 100; ++i) {
            ModelSpec spec = small_spec(arch);
            for (std::size_t& h : spec.hidden) {
                h = uniform(rng, 1, 8);
            }
            const Model m = random_from(spec, rng);
            save_model(m, dir / "a.mfir");
            save_model(load_model(dir / "a.mfir"), dir / "b.mfir");
            // Blob names differ by design; compare the manifests without them.
            std::string ma = slurp(dir / "a.mfir");
            std::string mb = slurp(dir / "b.mfir");
            const auto strip = [](std::string s, const std::string& blob) {
                const auto at = s.find(blob);
                return at == std::string::npos ? s : s.erase(at, blob.size());
            };
            const bool same = strip(ma, "a.mfir.bin") == strip(mb, "b.mfir.bin") &&
                              slurp(dir / "a.mfir.bin") == slurp(dir / "b.mfir.bin");
            failures += same ? 0 : 1;
            ++total;
        }
    }
    return {failures == 0, std::to_string(total - failures) + "/" + std::to_string(total) + " byte-identical"};
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"tensor-product oracle", tensor_oracle},
        {"sinkhorn feasibility and optimality", sinkhorn_checks},
        {"WB permutation recovery", wb_recovery},
        {"GWB recurrent permutation recovery", gwb_recovery},
        {"self-fusion fixed points", self_fusion},
        {"weight-update monotonicity", monotonicity},
        {"two-moons MLP fusion direction", moons_direction},
        {"parity RNN/LSTM GWB vs WB", parity_direction},
        {"zero-alpha reduction identity", reduction_identity},
        {"residual shared couplings", resnet_policy},
        {"MFIR round trip", format_round_trip},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
