#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "wbfuse/eval.hpp"

namespace wbfuse {

std::string_view to_string(Split s)
{
    switch (s) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::test:
        return "test";
    }
    return "?";
}

void Dataset::validate() const
{
    require(labels.size() == inputs.size(), "dataset: " + std::to_string(inputs.size()) + " inputs but " +
                                                std::to_string(labels.size()) + " labels");
    require(step_labels.empty() || step_labels.size() == inputs.size(), "dataset: step labels per sample");
    require(num_classes >= 1, "dataset: no classes");
    for (std::size_t s = 0; s < labels.size(); ++s) {
        require(labels[s] < num_classes, "dataset: sample " + std::to_string(s) + " has label " +
                                             std::to_string(labels[s]) + " >= " + std::to_string(num_classes));
        if (!step_labels.empty()) {
            for (std::size_t l : step_labels[s]) {
                require(l < num_classes, "dataset: sample " + std::to_string(s) + " has a step label out of range");
            }
        }
    }
}

namespace {

// Balanced labels in shuffled order.
std::vector<std::size_t> balanced_labels(std::size_t n, std::mt19937_64& rng)
{
    std::vector<std::size_t> labels(n);
    for (std::size_t s = 0; s < n; ++s) {
        labels[s] = s % 2;
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

double parse_double(std::string_view field, std::size_t line)
{
    double v = 0.0;
    const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    require(ec == std::errc() && end == field.data() + field.size(),
            "dataset line " + std::to_string(line) + ": bad number '" + std::string(field) + "'");
    return v;
}

std::size_t parse_label(std::string_view field, std::size_t line)
{
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    require(ec == std::errc() && end == field.data() + field.size(),
            "dataset line " + std::to_string(line) + ": bad label '" + std::string(field) + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) {
        fields.push_back(f);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

} // namespace

Dataset two_gaussians(std::size_t n, std::uint64_t seed, double separation, Split split)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset d;
    d.split = split;
    d.labels = balanced_labels(n, rng);
    for (std::size_t s = 0; s < n; ++s) {
        const double cx = (d.labels[s] == 0 ? -0.5 : 0.5) * separation;
        const double x = cx + noise(rng);
        const double y = noise(rng);
        d.inputs.push_back({x, y});
    }
    return d;
}

Dataset two_moons(std::size_t n, std::uint64_t seed, double noise, Split split)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::normal_distribution<double> jitter(0.0, noise);
    Dataset d;
    d.split = split;
    d.labels = balanced_labels(n, rng);
    for (std::size_t s = 0; s < n; ++s) {
        const double t = angle(rng);
        double x = std::cos(t);
        double y = std::sin(t);
        if (d.labels[s] == 1) {
            x = 1.0 - x;
            y = 0.5 - y;
        }
        x += jitter(rng);
        y += jitter(rng);
        d.inputs.push_back({x, y});
    }
    return d;
}

Dataset sequence_parity(std::size_t n, std::size_t length, std::uint64_t seed, Split split)
{
    require(length >= 1, "sequence_parity: length must be positive");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    Dataset d;
    d.split = split;
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<double> x(length);
        std::vector<std::size_t> prefix(length);
        std::size_t parity = 0;
        for (std::size_t t = 0; t < length; ++t) {
            const bool negative = coin(rng);
            x[t] = negative ? -1.0 : 1.0;
            parity ^= negative ? 1 : 0;
            prefix[t] = parity;
        }
        d.inputs.push_back(std::move(x));
        d.labels.push_back(parity);
        d.step_labels.push_back(std::move(prefix));
    }
    return d;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path)
{
    data.validate();
    require(data.size() > 0, "write_dataset: empty dataset");
    std::ofstream out(path);
    require(static_cast<bool>(out), "write_dataset: cannot open " + path.string());
    const std::size_t features = data.inputs.front().size();
    const std::size_t steps = data.step_labels.empty() ? 0 : data.step_labels.front().size();
    out << "label";
    for (std::size_t f = 0; f < features; ++f) {
        out << ",f" << f;
    }
    for (std::size_t t = 0; t < steps; ++t) {
        out << ",s" << t;
    }
    out << '\n';
    out.precision(17);
    for (std::size_t s = 0; s < data.size(); ++s) {
        require(data.inputs[s].size() == features, "write_dataset: samples differ in length");
        out << data.labels[s];
        for (double v : data.inputs[s]) {
            out << ',' << v;
        }
        if (steps > 0) {
            require(data.step_labels[s].size() == steps, "write_dataset: step label counts differ");
            for (std::size_t l : data.step_labels[s]) {
                out << ',' << l;
            }
        }
        out << '\n';
    }
    require(static_cast<bool>(out), "write_dataset: write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path, Split split)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "read_dataset: cannot open " + path.string());
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "read_dataset: " + path.string() + " is empty");
    const std::vector<std::string> header = split_csv(line);
    require(!header.empty() && header[0] == "label", "read_dataset: header must start with 'label'");
    std::size_t features = 0;
    std::size_t steps = 0;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string& h = header[c];
        if (h == "f" + std::to_string(features) && steps == 0) {
            ++features;
        } else if (h == "s" + std::to_string(steps)) {
            ++steps;
        } else {
            throw ContractViolation("read_dataset: unexpected column '" + h + "'");
        }
    }
    require(features > 0, "read_dataset: no feature columns");

    Dataset d;
    d.split = split;
    std::size_t top = 0;
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        if (line.empty()) {
            continue;
        }
        const std::vector<std::string> fields = split_csv(line);
        require(fields.size() == 1 + features + steps, "dataset line " + std::to_string(lineno) + ": expected " +
                                                            std::to_string(1 + features + steps) + " fields, got " +
                                                            std::to_string(fields.size()));
        d.labels.push_back(parse_label(fields[0], lineno));
        top = std::max(top, d.labels.back());
        std::vector<double> x(features);
        for (std::size_t f = 0; f < features; ++f) {
            x[f] = parse_double(fields[1 + f], lineno);
        }
        d.inputs.push_back(std::move(x));
        if (steps > 0) {
            std::vector<std::size_t> s(steps);
            for (std::size_t t = 0; t < steps; ++t) {
                s[t] = parse_label(fields[1 + features + t], lineno);
                top = std::max(top, s[t]);
            }
            d.step_labels.push_back(std::move(s));
        }
    }
    d.num_classes = std::max<std::size_t>(2, top + 1);
    d.validate();
    return d;
}

} // namespace wbfuse
