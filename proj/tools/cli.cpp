#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "wbfuse/eval.hpp"
#include "wbfuse/fusion.hpp"
#include "wbfuse/landscape.hpp"
#include "wbfuse/mfir.hpp"

namespace wbfuse::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class T>
std::vector<T> parse_list(const std::string& text, const std::string& what)
{
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        T v{};
        const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || ec != std::errc() || end != item.data() + item.size()) {
            throw ConfigError(what + ": '" + item + "' is not a valid number");
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw ConfigError(what + ": empty list");
    }
    return out;
}

void require_file(const std::string& path)
{
    if (!fs::is_regular_file(path)) {
        throw IoError("no such file: " + path);
    }
}

Dataset load_dataset(const std::string& path)
{
    require_file(path);
    try {
        return read_dataset(path, Split::test);
    } catch (const ContractViolation& e) {
        throw IoError(e.what());
    }
}

void require_same_shape(const Model& a, const Model& b, const std::string& what)
{
    if (zeros_like(a) != zeros_like(b)) {
        throw ConfigError(what + ": models differ in architecture or shape");
    }
}

// Settings shared by fuse and align. Every key can come from the config file
// or from the flag of the same name (underscores as dashes); flags win.
const std::vector<std::string> kConfigKeys = {
    "method",   "eps",        "max_iter",   "tol",        "log_domain", "outer_max",
    "outer_tol", "lambda",    "target_widths", "init",    "init_index", "init_std",
    "seed",     "last_layer", "threads",    "alpha_h",    "inner_max",  "alpha_in_inner",
};

struct FusionFlags {
    std::string config;
    std::string method;
    double eps = 0.0;
    std::size_t max_iter = 0;
    double tol = 0.0;
    bool log_domain = true;
    std::size_t outer_max = 0;
    double outer_tol = 0.0;
    std::string lambda;
    std::string target_widths;
    std::string init;
    std::size_t init_index = 0;
    double init_std = 0.0;
    std::uint64_t seed = 0;
    std::string last_layer;
    std::size_t threads = 0;
    double alpha_h = 0.0;
    std::size_t inner_max = 0;
    bool alpha_in_inner = true;
    std::map<std::string, CLI::Option*> given;

    void add(CLI::App& cmd)
    {
        cmd.add_option("--config", config, "JSON file with fusion settings (flags override it)")->check(CLI::ExistingFile);
        given["method"] = cmd.add_option("--method", method, "wb | gwb | ot | avg (default wb)")
                              ->check(CLI::IsMember({"wb", "gwb", "ot", "avg"}));
        given["eps"] = cmd.add_option("--eps", eps, "entropic regularization (default 0.005)");
        given["max_iter"] = cmd.add_option("--max-iter", max_iter, "Sinkhorn iteration cap");
        given["tol"] = cmd.add_option("--tol", tol, "Sinkhorn marginal tolerance");
        given["log_domain"] = cmd.add_option("--log-domain", log_domain, "true | false");
        given["outer_max"] = cmd.add_option("--outer-max", outer_max, "outer iterations per layer (default 10)");
        given["outer_tol"] = cmd.add_option("--outer-tol", outer_tol, "relative weight change to stop (default 1e-6)");
        given["lambda"] = cmd.add_option("--lambda", lambda, "barycenter weights, e.g. 0.7,0.3");
        given["target_widths"] = cmd.add_option("--target-widths", target_widths, "fused hidden widths, e.g. 8,8");
        given["init"] = cmd.add_option("--init", init, "automatic | copy_model | random")
                            ->check(CLI::IsMember({"automatic", "copy_model", "random"}));
        given["init_index"] = cmd.add_option("--init-index", init_index, "input copied by copy_model");
        given["init_std"] = cmd.add_option("--init-std", init_std, "std of random init (default 0.01)");
        given["seed"] = cmd.add_option("--seed", seed, "seed of the init policy");
        given["last_layer"] = cmd.add_option("--last-layer", last_layer, "identity | solve")
                                  ->check(CLI::IsMember({"identity", "solve"}));
        given["threads"] = cmd.add_option("--threads", threads, "coupling solves in parallel (env WBFUSE_THREADS)");
        given["alpha_h"] = cmd.add_option("--alpha-h", alpha_h, "weight of the hidden-structure term (default 5)");
        given["inner_max"] = cmd.add_option("--inner-max", inner_max, "GW iterations per coupling solve");
        given["alpha_in_inner"] = cmd.add_option("--alpha-in-inner", alpha_in_inner, "true | false");
    }

    json flag_value(const std::string& key) const
    {
        if (key == "method") return method;
        if (key == "eps") return eps;
        if (key == "max_iter") return max_iter;
        if (key == "tol") return tol;
        if (key == "log_domain") return log_domain;
        if (key == "outer_max") return outer_max;
        if (key == "outer_tol") return outer_tol;
        if (key == "lambda") return parse_list<double>(lambda, "--lambda");
        if (key == "target_widths") return parse_list<std::size_t>(target_widths, "--target-widths");
        if (key == "init") return init;
        if (key == "init_index") return init_index;
        if (key == "init_std") return init_std;
        if (key == "seed") return seed;
        if (key == "last_layer") return last_layer;
        if (key == "threads") return threads;
        if (key == "alpha_h") return alpha_h;
        if (key == "inner_max") return inner_max;
        return alpha_in_inner;
    }

    json settings() const
    {
        json s = json::object();
        if (const char* env = std::getenv("WBFUSE_THREADS"); env != nullptr && *env != '\0') {
            s["threads"] = parse_list<std::size_t>(env, "WBFUSE_THREADS").at(0);
        }
        if (!config.empty()) {
            std::ifstream in(config);
            json file;
            try {
                file = json::parse(in);
            } catch (const json::exception& e) {
                throw ConfigError("config " + config + ": " + e.what());
            }
            if (!file.is_object()) {
                throw ConfigError("config " + config + ": expected a JSON object");
            }
            for (const auto& [key, value] : file.items()) {
                if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end()) {
                    throw ConfigError("config " + config + ": unknown key '" + key + "'");
                }
                s[key] = value;
            }
        }
        for (const auto& [key, opt] : given) {
            if (opt->count() > 0) {
                s[key] = flag_value(key);
            }
        }
        return s;
    }
};

template <class T>
T setting(const json& s, const std::string& key, T fallback)
{
    if (!s.contains(key)) {
        return fallback;
    }
    const json& v = s.at(key);
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) {
            throw ConfigError(key + " must be a nonnegative integer");
        }
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) {
            throw ConfigError(key + " must be a number");
        }
    } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) {
            throw ConfigError(key + " must be true or false");
        }
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) {
            throw ConfigError(key + " must be a string");
        }
    }
    try {
        return v.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

struct ResolvedFusion {
    std::string method;
    GwbConfig cfg;
};

ResolvedFusion resolve_fusion(const FusionFlags& flags)
{
    const json s = flags.settings();
    ResolvedFusion r;
    r.method = setting<std::string>(s, "method", "wb");
    if (r.method != "wb" && r.method != "gwb" && r.method != "ot" && r.method != "avg") {
        throw ConfigError("method must be wb, gwb, ot or avg");
    }
    FusionConfig& f = r.cfg.base;
    f.sinkhorn = SinkhornParams::for_epsilon(setting<double>(s, "eps", 5e-3));
    f.sinkhorn.max_iter = setting<std::size_t>(s, "max_iter", f.sinkhorn.max_iter);
    f.sinkhorn.tol = setting<double>(s, "tol", f.sinkhorn.tol);
    f.sinkhorn.log_domain = setting<bool>(s, "log_domain", f.sinkhorn.log_domain);
    f.outer_max = setting<std::size_t>(s, "outer_max", f.outer_max);
    f.outer_tol = setting<double>(s, "outer_tol", f.outer_tol);
    f.lambda = setting<std::vector<double>>(s, "lambda", {});
    f.target_widths = setting<std::vector<std::size_t>>(s, "target_widths", {});
    const std::string init = setting<std::string>(s, "init", "automatic");
    if (init == "automatic") {
        f.init.kind = InitPolicy::Kind::automatic;
    } else if (init == "copy_model") {
        f.init.kind = InitPolicy::Kind::copy_model;
    } else if (init == "random") {
        f.init.kind = InitPolicy::Kind::random;
    } else {
        throw ConfigError("init must be automatic, copy_model or random");
    }
    f.init.index = setting<std::size_t>(s, "init_index", 0);
    f.init.std = setting<double>(s, "init_std", f.init.std);
    f.init.seed = setting<std::uint64_t>(s, "seed", 0);
    const std::string last = setting<std::string>(s, "last_layer", "identity");
    if (last != "identity" && last != "solve") {
        throw ConfigError("last_layer must be identity or solve");
    }
    f.last_layer = last == "identity" ? LastLayerPolicy::identity : LastLayerPolicy::solve;
    f.threads = setting<std::size_t>(s, "threads", 1);
    r.cfg.alpha_h = setting<double>(s, "alpha_h", r.cfg.alpha_h);
    r.cfg.inner_max = setting<std::size_t>(s, "inner_max", r.cfg.inner_max);
    r.cfg.alpha_in_inner = setting<bool>(s, "alpha_in_inner", r.cfg.alpha_in_inner);
    try {
        f.sinkhorn.validate();
    } catch (const ContractViolation& e) {
        throw ConfigError(e.what());
    }
    if (r.cfg.alpha_h < 0.0 || r.cfg.inner_max == 0) {
        throw ConfigError("alpha_h must be nonnegative and inner_max positive");
    }
    return r;
}

void write_trace(const std::vector<LayerTrace>& trace, const fs::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(17);
    out << "layer\touter\tbefore_update\tafter_update\tconverged\n";
    for (const LayerTrace& t : trace) {
        for (const TraceStep& s : t.steps) {
            out << t.layer << '\t' << s.outer << '\t' << s.before_update << '\t' << s.after_update << '\t'
                << (t.converged ? 1 : 0) << '\n';
        }
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

std::vector<Model> load_models(const std::vector<std::string>& paths)
{
    for (const std::string& p : paths) {
        require_file(p);
    }
    std::vector<Model> models;
    for (const std::string& p : paths) {
        models.push_back(load_model(p));
    }
    return models;
}

struct FuseCommand {
    FusionFlags flags;
    std::vector<std::string> inputs;
    std::string output;
    std::string couplings;
    std::string trace;
    bool self = false;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("fuse", "Fuse models into one");
        flags.add(*cmd);
        cmd->add_option("inputs", inputs, "input MFIR manifests")->required();
        cmd->add_option("-o,--output", output, "fused MFIR manifest")->required();
        cmd->add_option("--couplings", couplings, "coupling sidecar (default <output>.couplings)");
        cmd->add_option("--trace", trace, "objective trace TSV (default <output>.trace.tsv)");
        cmd->add_flag("--self", self, "fuse a single model with itself");
    }

    int run(std::ostream& out) const
    {
        const ResolvedFusion r = resolve_fusion(flags);
        if (inputs.size() < 2 && !(self && inputs.size() == 1)) {
            throw ConfigError("fuse needs at least two inputs (or one with --self)");
        }
        std::vector<Model> models = load_models(inputs);
        if (self && models.size() == 1) {
            models.push_back(models.front());
        }
        try {
            r.cfg.base.validate(models.size());
        } catch (const ContractViolation& e) {
            throw ConfigError(e.what());
        }
        FusionResult result;
        if (r.method == "avg") {
            std::vector<double> lambda = r.cfg.base.lambda;
            if (lambda.empty()) {
                lambda.assign(models.size(), 1.0 / static_cast<double>(models.size()));
            }
            result.fused = vanilla_average(models, lambda);
        } else if (r.method == "wb") {
            result = wb_fuse_model(models, r.cfg.base);
        } else if (r.method == "gwb") {
            result = gwb_fuse_model(models, r.cfg);
        } else {
            result = ot_fusion_baseline(models, r.cfg.base);
        }
        save_model(result.fused, output);
        if (!result.couplings.empty()) {
            save_couplings(result.couplings, couplings.empty() ? output + ".couplings" : couplings);
            write_trace(result.trace, trace.empty() ? output + ".trace.tsv" : trace);
        }
        out << "fused " << models.size() << " models (" << r.method << ") -> " << output << '\n';
        return kOk;
    }
};

struct AlignCommand {
    FusionFlags flags;
    std::string reference;
    std::string model;
    std::string output;
    std::string couplings;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("align", "Rewrite a model into the node order of a reference");
        flags.add(*cmd);
        cmd->add_option("reference", reference, "reference MFIR manifest")->required();
        cmd->add_option("model", model, "MFIR manifest to align")->required();
        cmd->add_option("-o,--output", output, "aligned MFIR manifest")->required();
        cmd->add_option("--couplings", couplings, "write the alignment couplings here");
    }

    int run(std::ostream& out) const
    {
        const ResolvedFusion r = resolve_fusion(flags);
        if (r.method != "wb" && r.method != "gwb") {
            throw ConfigError("align supports --method wb or gwb");
        }
        const std::vector<Model> models = load_models({reference, model});
        const std::vector<Matrix> c = r.method == "wb" ? alignment_couplings(models[0], models[1], r.cfg.base)
                                                       : alignment_couplings(models[0], models[1], r.cfg);
        save_model(align_model(models[1], c), output);
        if (!couplings.empty()) {
            save_couplings({c}, couplings);
        }
        out << "aligned " << model << " to " << reference << " -> " << output << '\n';
        return kOk;
    }
};

struct EvalCommand {
    std::string model;
    std::string data;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("eval", "Print the accuracy of a model on a dataset");
        cmd->add_option("model", model, "MFIR manifest")->required();
        cmd->add_option("--data", data, "dataset CSV")->required();
    }

    int run(std::ostream& out) const
    {
        const Dataset d = load_dataset(data);
        const Model m = load_models({model}).front();
        out << accuracy(m, d) << '\n';
        return kOk;
    }
};

struct PlaneCommand {
    std::vector<std::string> models;
    std::string data;
    std::size_t rows = 25;
    std::size_t cols = 25;
    std::string bounds;
    double margin = 0.4;
    std::size_t threads = 1;
    std::string output;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("plane", "Test error over the plane through three models");
        cmd->add_option("models", models, "model1 model2 aligned2")->required()->expected(3);
        cmd->add_option("--data", data, "dataset CSV")->required();
        cmd->add_option("--rows", rows, "grid rows")->check(CLI::Range(2, 10000));
        cmd->add_option("--cols", cols, "grid columns")->check(CLI::Range(2, 10000));
        cmd->add_option("--bounds", bounds, "x_min,x_max,y_min,y_max");
        cmd->add_option("--margin", margin, "default bounds: anchor box widened by this fraction per side")
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("--threads", threads, "grid rows evaluated in parallel")->check(CLI::PositiveNumber);
        cmd->add_option("-o,--output", output, "grid CSV (default stdout)");
    }

    int run(std::ostream& out) const
    {
        std::optional<GridBounds> b;
        if (!bounds.empty()) {
            const std::vector<double> v = parse_list<double>(bounds, "--bounds");
            if (v.size() != 4) {
                throw ConfigError("--bounds needs four numbers");
            }
            b = GridBounds{v[0], v[1], v[2], v[3]};
        }
        const Dataset d = load_dataset(data);
        const std::vector<Model> m = load_models(models);
        require_same_shape(m[0], m[1], "plane");
        require_same_shape(m[0], m[2], "plane");
        const Plane p = make_plane(flatten(m[0]), flatten(m[1]), flatten(m[2]));
        const PlaneGrid g = grid_eval(p, m[0], d, rows, cols, b ? b : default_bounds(p, margin), threads);
        if (output.empty()) {
            write_grid_csv(g, out);
            return kOk;
        }
        std::ofstream file(output);
        if (!file) {
            throw IoError("cannot write " + output);
        }
        write_grid_csv(g, file);
        if (!file) {
            throw IoError("write failed for " + output);
        }
        return kOk;
    }
};

struct BarrierCommand {
    std::string a;
    std::string b;
    std::string data;
    std::size_t steps = 21;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("barrier", "Error barrier along the straight path between two models");
        cmd->add_option("a", a, "first MFIR manifest")->required();
        cmd->add_option("b", b, "second MFIR manifest")->required();
        cmd->add_option("--data", data, "dataset CSV")->required();
        cmd->add_option("--steps", steps, "points on the path, endpoints included")->check(CLI::Range(2, 100000));
    }

    int run(std::ostream& out) const
    {
        const Dataset d = load_dataset(data);
        const std::vector<Model> m = load_models({a, b});
        require_same_shape(m[0], m[1], "barrier");
        out << segment_barrier(flatten(m[0]), flatten(m[1]), m[0], d, steps) << '\n';
        return kOk;
    }
};

struct TrainCommand {
    std::string arch;
    std::string data;
    std::string output;
    std::size_t input_dim = 0;
    std::string input_shape;
    std::string hidden = "16";
    std::size_t outputs = 0;
    std::size_t kernel = 3;
    std::size_t blocks = 1;
    std::size_t block_depth = 2;
    TrainConfig cfg;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("train", "Train a model with minibatch SGD");
        cmd->add_option("--arch", arch, "mlp | cnn | resmlp | rnn | lstm")
            ->required()
            ->check(CLI::IsMember({"mlp", "cnn", "resmlp", "rnn", "lstm"}));
        cmd->add_option("--data", data, "training CSV")->required();
        cmd->add_option("-o,--output", output, "MFIR manifest")->required();
        cmd->add_option("--input-dim", input_dim, "features per sample (per step for rnn/lstm)");
        cmd->add_option("--input-shape", input_shape, "cnn input c,h,w");
        cmd->add_option("--hidden", hidden, "hidden widths (channels for cnn), e.g. 16,16");
        cmd->add_option("--outputs", outputs, "output classes (default: from the data)");
        cmd->add_option("--kernel", kernel, "cnn kernel size");
        cmd->add_option("--blocks", blocks, "resmlp residual blocks");
        cmd->add_option("--block-depth", block_depth, "dense layers per residual block");
        cmd->add_option("--seed", cfg.seed, "initialization and shuffling seed");
        cmd->add_option("--epochs", cfg.epochs, "passes over the data");
        cmd->add_option("--lr", cfg.lr, "learning rate")->check(CLI::NonNegativeNumber);
        cmd->add_option("--batch", cfg.batch, "minibatch size")->check(CLI::PositiveNumber);
        cmd->add_option("--clip", cfg.clip, "gradient norm cap (0: off)")->check(CLI::NonNegativeNumber);
        cmd->add_option("--init-std", cfg.init_std, "initial weight std (0: fan-in scaling)")
            ->check(CLI::NonNegativeNumber);
    }

    int run(std::ostream& out) const
    {
        ModelSpec spec;
        spec.arch = *parse_arch_tag(arch);
        spec.hidden = parse_list<std::size_t>(hidden, "--hidden");
        spec.kernel = kernel;
        spec.residual_blocks = blocks;
        spec.block_depth = block_depth;
        if (!input_shape.empty()) {
            spec.input_shape = parse_list<std::size_t>(input_shape, "--input-shape");
        }
        if (spec.arch == ArchTag::cnn && spec.input_shape.size() != 3) {
            throw ConfigError("cnn needs --input-shape c,h,w");
        }
        const Dataset d = load_dataset(data);
        const bool recurrent = spec.arch == ArchTag::rnn || spec.arch == ArchTag::lstm;
        const std::size_t features = d.inputs.front().size();
        spec.input_dim = input_dim != 0 ? input_dim : (recurrent ? 1 : features);
        if (spec.arch == ArchTag::cnn && input_dim == 0) {
            spec.input_dim = spec.input_shape[0] * spec.input_shape[1] * spec.input_shape[2];
        }
        if (recurrent ? features % spec.input_dim != 0 : features != spec.input_dim) {
            throw ConfigError("data has " + std::to_string(features) + " features per sample, model expects " +
                              std::to_string(spec.input_dim) + (recurrent ? " per step" : ""));
        }
        spec.num_outputs = outputs != 0 ? outputs : d.num_classes;
        Model m;
        try {
            std::mt19937_64 rng(cfg.seed);
            m = build_model(spec, rng, InitParams{cfg.init_std});
        } catch (const ContractViolation& e) {
            throw ConfigError(e.what());
        }
        m = train_from(std::move(m), d, cfg);
        save_model(m, output);
        out << "train accuracy " << accuracy(m, d) << " -> " << output << '\n';
        return kOk;
    }
};

struct GenDataCommand {
    std::string task;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    double noise = 0.1;
    double separation = 4.0;
    std::size_t length = 8;
    std::string output;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("gen-data", "Write a synthetic dataset");
        cmd->add_option("--task", task, "two-gaussians | two-moons | parity")
            ->required()
            ->check(CLI::IsMember({"two-gaussians", "two-moons", "parity"}));
        cmd->add_option("--n", n, "samples")->check(CLI::PositiveNumber);
        cmd->add_option("--seed", seed, "generator seed");
        cmd->add_option("--noise", noise, "two-moons noise std")->check(CLI::NonNegativeNumber);
        cmd->add_option("--separation", separation, "two-gaussians centre distance");
        cmd->add_option("--length", length, "parity sequence length")->check(CLI::PositiveNumber);
        cmd->add_option("-o,--output", output, "dataset CSV")->required();
    }

    int run(std::ostream& out) const
    {
        Dataset d;
        if (task == "two-gaussians") {
            d = two_gaussians(n, seed, separation);
        } else if (task == "two-moons") {
            d = two_moons(n, seed, noise);
        } else {
            d = sequence_parity(n, length, seed);
        }
        try {
            write_dataset(d, output);
        } catch (const ContractViolation& e) {
            throw IoError(e.what());
        }
        out << "wrote " << d.size() << " samples -> " << output << '\n';
        return kOk;
    }
};

struct ValidateCommand {
    std::string model;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("validate", "Check an MFIR model file");
        cmd->add_option("model", model, "MFIR manifest")->required();
    }

    int run(std::ostream& out) const
    {
        const Model m = load_models({model}).front();
        out << "valid " << to_string(m.arch) << " model: " << m.layers.size() << " layers, " << parameter_count(m)
            << " parameters\n";
        return kOk;
    }
};

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Fuse neural networks with Wasserstein and Gromov-Wasserstein barycenters", "wbfuse"};
    app.require_subcommand(1);
    FuseCommand fuse;
    AlignCommand align;
    EvalCommand eval;
    PlaneCommand plane;
    BarrierCommand barrier;
    TrainCommand train_cmd;
    GenDataCommand gen;
    ValidateCommand validate_cmd;
    fuse.add(app);
    align.add(app);
    eval.add(app);
    plane.add(app);
    barrier.add(app);
    train_cmd.add(app);
    gen.add(app);
    validate_cmd.add(app);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        const std::string name = app.get_subcommands().front()->get_name();
        const std::streamsize precision = out.precision(10);
        int code = kOk;
        if (name == "fuse") {
            code = fuse.run(out);
        } else if (name == "align") {
            code = align.run(out);
        } else if (name == "eval") {
            code = eval.run(out);
        } else if (name == "plane") {
            code = plane.run(out);
        } else if (name == "barrier") {
            code = barrier.run(out);
        } else if (name == "train") {
            code = train_cmd.run(out);
        } else if (name == "gen-data") {
            code = gen.run(out);
        } else {
            code = validate_cmd.run(out);
        }
        out.precision(precision);
        return code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ContractViolation& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const MfirError& e) {
        err << "file error (" << to_string(e.code()) << "): " << e.what() << '\n';
        return kIoError;
    } catch (const IoError& e) {
        err << "file error: " << e.what() << '\n';
        return kIoError;
    } catch (const fs::filesystem_error& e) {
        err << "file error: " << e.what() << '\n';
        return kIoError;
    } catch (const SolverError& e) {
        err << "solver error: " << e.what() << '\n';
        return kSolverError;
    } catch (const TrainingError& e) {
        err << "solver error: " << e.what() << '\n';
        return kSolverError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kSolverError;
    }
}

} // namespace wbfuse::cli
