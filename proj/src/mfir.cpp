#include "wbfuse/mfir.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace wbfuse {

namespace {

using nlohmann::json;
using Shape = std::vector<std::size_t>;

constexpr int kVersion = 1;

std::string shape_str(const Shape& s)
{
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? "," : "") + std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t element_count(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void put_f32(std::string& blob, double v)
{
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) {
        blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
}

double get_f32(const std::string& blob, std::size_t at)
{
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[at + b])) << (8 * b);
    }
    return static_cast<double>(std::bit_cast<float>(bits));
}

std::string read_file(const std::filesystem::path& path, MfirErrorCode missing)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MfirError(missing, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw MfirError(MfirErrorCode::io, "cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw MfirError(MfirErrorCode::io, "write failed for " + path.string());
    }
}

class BlobWriter {
public:
    json add(const std::string& name, const Shape& shape, std::span<const double> values)
    {
        json entry = {{"name", name}, {"offset", bytes_.size()}, {"shape", shape}};
        for (double v : values) {
            put_f32(bytes_, v);
        }
        return entry;
    }
    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

class BlobReader {
public:
    BlobReader(std::string bytes, std::string where) : bytes_(std::move(bytes)), where_(std::move(where)) {}

    std::vector<double> read(std::size_t offset, const Shape& shape, const std::string& what) const
    {
        const std::size_t n = element_count(shape);
        if (offset > bytes_.size() || n > (bytes_.size() - offset) / 4) {
            throw MfirError(MfirErrorCode::out_of_range, what + ": " + std::to_string(n) + " floats at offset " +
                                                             std::to_string(offset) + " run past the end of " +
                                                             where_ + " (" + std::to_string(bytes_.size()) +
                                                             " bytes)");
        }
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = get_f32(bytes_, offset + 4 * i);
            if (!std::isfinite(out[i])) {
                throw MfirError(MfirErrorCode::non_finite, what + ": non-finite value at element " +
                                                               std::to_string(i));
            }
        }
        return out;
    }

private:
    std::string bytes_;
    std::string where_;
};

template <class T>
T field(const json& j, const char* key, const std::string& where)
{
    if (!j.is_object() || !j.contains(key)) {
        throw MfirError(MfirErrorCode::parse, where + ": missing \"" + key + "\"");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw MfirError(MfirErrorCode::parse, where + ": bad \"" + key + "\": " + e.what());
    }
}

// Tensors of one manifest layer, looked up by name.
class LayerTensors {
public:
    LayerTensors(const json& layer, const BlobReader& blob, std::string where) : blob_(blob), where_(std::move(where))
    {
        for (const json& t : field<json>(layer, "tensors", where_)) {
            const auto name = field<std::string>(t, "name", where_);
            entries_[name] = {field<std::size_t>(t, "offset", where_ + " " + name),
                              field<Shape>(t, "shape", where_ + " " + name)};
        }
    }

    std::vector<double> values(const std::string& name, const Shape& expected) const
    {
        return blob_.read(lookup(name, expected).offset, expected, where_ + " " + name);
    }

    std::vector<double> vector(const std::string& name, std::size_t len) const { return values(name, {len}); }

    Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) const
    {
        return Matrix(rows, cols, values(name, {rows, cols}));
    }

    const Shape& shape_of(const std::string& name) const { return find(name).shape; }

private:
    struct Entry {
        std::size_t offset;
        Shape shape;
    };

    const Entry& find(const std::string& name) const
    {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw MfirError(MfirErrorCode::parse, where_ + ": missing tensor \"" + name + "\"");
        }
        return it->second;
    }

    const Entry& lookup(const std::string& name, const Shape& expected) const
    {
        const Entry& e = find(name);
        if (e.shape != expected) {
            throw MfirError(MfirErrorCode::shape_mismatch, where_ + " " + name + ": shape " + shape_str(e.shape) +
                                                               ", expected " + shape_str(expected));
        }
        return e;
    }

    const BlobReader& blob_;
    std::string where_;
    std::map<std::string, Entry> entries_;
};

Shape layer_shape(const json& layer, std::size_t rank, const std::string& where)
{
    Shape s = field<Shape>(layer, "shape", where);
    if (s.size() != rank) {
        throw MfirError(MfirErrorCode::shape_mismatch,
                        where + ": layer shape " + shape_str(s) + " should have " + std::to_string(rank) + " entries");
    }
    return s;
}

DenseLayer read_dense(const LayerTensors& t, const std::string& prefix)
{
    const Shape& ws = t.shape_of(prefix + "weight");
    if (ws.size() != 2) {
        throw MfirError(MfirErrorCode::shape_mismatch, prefix + "weight must be 2-d");
    }
    return {t.matrix(prefix + "weight", ws[0], ws[1]), t.vector(prefix + "bias", ws[0])};
}

RecurrentLayer read_recurrent(const LayerTensors& t, const std::string& prefix, std::size_t hidden, std::size_t in)
{
    return {t.matrix(prefix + "input_weight", hidden, in), t.matrix(prefix + "hidden_weight", hidden, hidden),
            t.vector(prefix + "bias", hidden)};
}

Layer read_layer(const json& layer, const BlobReader& blob, const std::string& where)
{
    const auto kind = field<std::string>(layer, "kind", where);
    const LayerTensors t(layer, blob, where);
    if (kind == "dense") {
        const Shape s = layer_shape(layer, 2, where);
        return DenseLayer{t.matrix("weight", s[0], s[1]), t.vector("bias", s[0])};
    }
    if (kind == "conv") {
        const Shape s = layer_shape(layer, 4, where);
        if (s[2] != s[3]) {
            throw MfirError(MfirErrorCode::shape_mismatch, where + ": conv filters must be square");
        }
        return ConvLayer{FilterBank(s[0], s[1], s[2], t.values("weight", s)), t.vector("bias", s[0])};
    }
    if (kind == "rnn") {
        const Shape s = layer_shape(layer, 2, where);
        return read_recurrent(t, "", s[0], s[1]);
    }
    if (kind == "lstm") {
        const Shape s = layer_shape(layer, 2, where);
        LstmLayer l;
        for (std::size_t g = 0; g < 4; ++g) {
            l.gates[g] = read_recurrent(t, std::string(kGateNames[g]) + ".", s[0], s[1]);
        }
        return l;
    }
    if (kind == "residual") {
        ResidualBlock r;
        r.skip_source = field<std::size_t>(layer, "skip_source", where);
        const auto inner = field<std::size_t>(layer, "inner", where);
        for (std::size_t k = 0; k < inner; ++k) {
            r.inner.push_back(read_dense(t, "inner" + std::to_string(k) + "."));
        }
        const Shape s = layer_shape(layer, 2, where);
        if (inner == 0 || s[0] != r.inner.back().out() || s[1] != r.inner.front().in()) {
            throw MfirError(MfirErrorCode::shape_mismatch, where + ": residual shape " + shape_str(s) +
                                                               " disagrees with its inner layers");
        }
        return r;
    }
    throw MfirError(MfirErrorCode::parse, where + ": unknown layer kind \"" + kind + "\"");
}

void write_dense(BlobWriter& blob, const DenseLayer& d, const std::string& prefix, json& tensors)
{
    tensors.push_back(blob.add(prefix + "weight", {d.out(), d.in()}, d.weight.data()));
    tensors.push_back(blob.add(prefix + "bias", {d.out()}, d.bias));
}

void write_recurrent(BlobWriter& blob, const RecurrentLayer& r, const std::string& prefix, json& tensors)
{
    tensors.push_back(blob.add(prefix + "input_weight", {r.hidden(), r.in()}, r.input_weight.data()));
    tensors.push_back(blob.add(prefix + "hidden_weight", {r.hidden(), r.hidden()}, r.hidden_weight.data()));
    tensors.push_back(blob.add(prefix + "bias", {r.hidden()}, r.bias));
}

json write_layer(BlobWriter& blob, const Layer& layer)
{
    json out;
    out["kind"] = std::string(layer_kind(layer));
    json tensors = json::array();
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        out["shape"] = Shape{d->out(), d->in()};
        write_dense(blob, *d, "", tensors);
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
        const Shape s{c->out(), c->in(), c->filters.kernel(), c->filters.kernel()};
        out["shape"] = s;
        tensors.push_back(blob.add("weight", s, c->filters.data()));
        tensors.push_back(blob.add("bias", {c->out()}, c->bias));
    } else if (const auto* r = std::get_if<RecurrentLayer>(&layer)) {
        out["shape"] = Shape{r->hidden(), r->in()};
        write_recurrent(blob, *r, "", tensors);
    } else if (const auto* l = std::get_if<LstmLayer>(&layer)) {
        out["shape"] = Shape{l->hidden(), l->in()};
        for (std::size_t g = 0; g < 4; ++g) {
            write_recurrent(blob, l->gates[g], std::string(kGateNames[g]) + ".", tensors);
        }
    } else {
        const auto& b = std::get<ResidualBlock>(layer);
        out["shape"] = Shape{b.inner.back().out(), b.inner.front().in()};
        out["skip_source"] = b.skip_source;
        out["inner"] = b.inner.size();
        for (std::size_t k = 0; k < b.inner.size(); ++k) {
            write_dense(blob, b.inner[k], "inner" + std::to_string(k) + ".", tensors);
        }
    }
    out["tensors"] = std::move(tensors);
    return out;
}

json parse_manifest(const std::filesystem::path& manifest)
{
    const std::string text = read_file(manifest, MfirErrorCode::io);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw MfirError(MfirErrorCode::parse, manifest.string() + ": " + e.what());
    }
    const auto version = field<int>(j, "version", manifest.string());
    if (version != kVersion) {
        throw MfirError(MfirErrorCode::version, manifest.string() + ": unsupported version " + std::to_string(version));
    }
    return j;
}

std::filesystem::path blob_path(const json& j, const std::filesystem::path& manifest)
{
    if (j.contains("blob")) {
        return manifest.parent_path() / field<std::string>(j, "blob", manifest.string());
    }
    return default_blob_path(manifest);
}

} // namespace

std::string_view to_string(MfirErrorCode code)
{
    switch (code) {
    case MfirErrorCode::io:
        return "io";
    case MfirErrorCode::parse:
        return "parse";
    case MfirErrorCode::version:
        return "version";
    case MfirErrorCode::missing_blob:
        return "missing_blob";
    case MfirErrorCode::out_of_range:
        return "out_of_range";
    case MfirErrorCode::shape_mismatch:
        return "shape_mismatch";
    case MfirErrorCode::non_finite:
        return "non_finite";
    case MfirErrorCode::invalid_model:
        return "invalid_model";
    }
    return "?";
}

std::filesystem::path default_blob_path(const std::filesystem::path& manifest)
{
    std::filesystem::path p = manifest;
    p += ".bin";
    return p;
}

Model load_model(const std::filesystem::path& manifest)
{
    const json j = parse_manifest(manifest);
    const std::string where = manifest.string();

    Model model;
    const auto tag = field<std::string>(j, "arch_tag", where);
    const auto arch = parse_arch_tag(tag);
    if (!arch) {
        throw MfirError(MfirErrorCode::parse, where + ": unknown arch_tag \"" + tag + "\"");
    }
    model.arch = *arch;
    model.input_dim = field<std::size_t>(j, "input_dim", where);
    if (j.contains("input_shape")) {
        model.input_shape = field<Shape>(j, "input_shape", where);
    }

    const BlobReader blob(read_file(blob_path(j, manifest), MfirErrorCode::missing_blob), blob_path(j, manifest).string());
    const json layers = field<json>(j, "layers", where);
    if (!layers.is_array()) {
        throw MfirError(MfirErrorCode::parse, where + ": \"layers\" must be an array");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        model.layers.push_back(read_layer(layers[i], blob, where + " layer " + std::to_string(i)));
    }

    const std::vector<Violation> report = validate(model);
    if (!report.empty()) {
        throw MfirError(MfirErrorCode::invalid_model, where + ":\n" + format_report(report));
    }
    return model;
}

void save_model(const Model& model, const std::filesystem::path& manifest)
{
    const std::vector<Violation> report = validate(model);
    if (!report.empty()) {
        throw MfirError(MfirErrorCode::invalid_model, "refusing to save an invalid model:\n" + format_report(report));
    }
    BlobWriter blob;
    json j;
    j["version"] = kVersion;
    j["arch_tag"] = std::string(to_string(model.arch));
    j["input_dim"] = model.input_dim;
    if (!model.input_shape.empty()) {
        j["input_shape"] = model.input_shape;
    }
    j["blob"] = default_blob_path(manifest).filename().string();
    j["layers"] = json::array();
    for (const Layer& layer : model.layers) {
        j["layers"].push_back(write_layer(blob, layer));
    }
    write_file(default_blob_path(manifest), blob.bytes());
    write_file(manifest, j.dump(2) + "\n");
}

void save_couplings(const CouplingSet& couplings, const std::filesystem::path& manifest)
{
    BlobWriter blob;
    json j;
    j["version"] = kVersion;
    j["kind"] = "couplings";
    j["blob"] = default_blob_path(manifest).filename().string();
    j["models"] = json::array();
    for (std::size_t i = 0; i < couplings.size(); ++i) {
        json layers = json::array();
        for (std::size_t l = 0; l < couplings[i].size(); ++l) {
            const Matrix& m = couplings[i][l];
            json entry = blob.add("model" + std::to_string(i) + ".layer" + std::to_string(l), {m.rows(), m.cols()},
                                  m.data());
            entry.erase("name");
            layers.push_back(std::move(entry));
        }
        j["models"].push_back(std::move(layers));
    }
    write_file(default_blob_path(manifest), blob.bytes());
    write_file(manifest, j.dump(2) + "\n");
}

CouplingSet load_couplings(const std::filesystem::path& manifest)
{
    const json j = parse_manifest(manifest);
    const std::string where = manifest.string();
    if (field<std::string>(j, "kind", where) != "couplings") {
        throw MfirError(MfirErrorCode::parse, where + ": not a coupling sidecar");
    }
    const BlobReader blob(read_file(blob_path(j, manifest), MfirErrorCode::missing_blob), blob_path(j, manifest).string());
    CouplingSet out;
    for (const json& model : field<json>(j, "models", where)) {
        std::vector<Matrix> layers;
        for (const json& entry : model) {
            const auto shape = field<Shape>(entry, "shape", where);
            if (shape.size() != 2) {
                throw MfirError(MfirErrorCode::shape_mismatch, where + ": couplings must be 2-d");
            }
            layers.emplace_back(shape[0], shape[1],
                                blob.read(field<std::size_t>(entry, "offset", where), shape, where));
        }
        out.push_back(std::move(layers));
    }
    return out;
}

} // namespace wbfuse
