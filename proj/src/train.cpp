#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "wbfuse/eval.hpp"

namespace wbfuse {

Model train_from(Model model, const Dataset& data, const TrainConfig& cfg)
{
    data.validate();
    require(data.size() > 0, "train: empty dataset");
    require(cfg.lr >= 0.0 && std::isfinite(cfg.lr), "train: lr must be a nonnegative number");
    require(cfg.batch >= 1, "train: batch must be at least 1");
    require(cfg.clip >= 0.0, "train: clip must be nonnegative");
    const std::vector<Violation> report = validate(model);
    require(report.empty(), "train: invalid model:\n" + format_report(report));
    require(model.num_outputs() >= data.num_classes, "train: model has fewer outputs than the dataset has classes");

    std::seed_seq seq{cfg.seed, std::uint64_t{0x5eed}};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> theta = flatten(model);
    std::vector<double> grad(theta.size());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t s = order[k];
                const std::span<const std::size_t> steps =
                    data.step_labels.empty() ? std::span<const std::size_t>{} : data.step_labels[s];
                const LossGradient lg = loss_gradient(model, data.inputs[s], data.labels[s], steps);
                loss += lg.loss;
                const std::vector<double> g = flatten(lg.gradient);
                for (std::size_t p = 0; p < grad.size(); ++p) {
                    grad[p] += g[p];
                }
            }
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "training diverged in epoch " << epoch << " (seed " << cfg.seed << ", lr " << cfg.lr
                    << "): loss " << loss;
                throw TrainingError(msg.str());
            }
            double scale = cfg.lr / static_cast<double>(end - start);
            if (cfg.clip > 0.0) {
                const double norm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0)) /
                                    static_cast<double>(end - start);
                if (norm > cfg.clip) {
                    scale *= cfg.clip / norm;
                }
            }
            for (std::size_t p = 0; p < theta.size(); ++p) {
                theta[p] -= scale * grad[p];
            }
            model = unflatten(model, theta);
        }
    }
    return model;
}

Model train(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg)
{
    std::mt19937_64 rng(cfg.seed);
    return train_from(build_model(spec, rng, InitParams{cfg.init_std}), data, cfg);
}

} // namespace wbfuse
