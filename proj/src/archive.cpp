#include "acq/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "acq/digest.hpp"

namespace acq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "model.json";
constexpr const char* kFormat = "acq-model";

std::vector<uint8_t> to_le_bytes(std::span<const float> values) {
  std::vector<uint8_t> out(values.size() * 4);
  for (size_t i = 0; i < values.size(); ++i) {
    const uint32_t u = std::bit_cast<uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<uint8_t>(u >> (8 * b));
  }
  return out;
}

std::vector<float> from_le_bytes(const std::vector<uint8_t>& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (size_t i = 0; i < out.size(); ++i) {
    uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<uint32_t>(bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

class BlobWriter {
 public:
  explicit BlobWriter(fs::path dir) : dir_(std::move(dir)) {}

  json add(std::span<const float> values, const Shape& shape) {
    char name[32];
    std::snprintf(name, sizeof(name), "blob_%04zu.bin", blobs_.size());
    const auto bytes = to_le_bytes(values);
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArchiveError("cannot write " + (dir_ / name).string());
    const std::string sha = sha256_hex(bytes);
    blobs_.push_back({{"file", name}, {"bytes", bytes.size()}, {"sha256", sha}});
    return {{"blob", blobs_.size() - 1}, {"shape", shape}};
  }
  json add(const Tensor& t) { return add(t.data(), t.shape()); }
  json add(const std::vector<float>& v) { return add(std::span<const float>(v), Shape{static_cast<int64_t>(v.size())}); }

  void finish(json& manifest) {
    Sha256 h;
    for (const auto& b : blobs_) h.update(b["sha256"].get<std::string>());
    manifest["blobs"] = blobs_;
    manifest["digest"] = h.hex();
    std::ofstream out(dir_ / kManifest, std::ios::trunc);
    out << manifest.dump(1) << '\n';
    if (!out) throw ArchiveError("cannot write " + (dir_ / kManifest).string());
  }

 private:
  fs::path dir_;
  json blobs_ = json::array();
};

class BlobReader {
 public:
  explicit BlobReader(const fs::path& dir) : dir_(dir) {
    std::ifstream in(dir / kManifest);
    if (!in) throw ArchiveError("missing manifest " + (dir / kManifest).string());
    try {
      manifest_ = json::parse(in);
    } catch (const json::exception& e) {
      throw ArchiveError("malformed manifest " + (dir / kManifest).string() + ": " + e.what());
    }
    if (manifest_.value("format", "") != kFormat) throw ArchiveError("not an acq model archive: " + dir.string());
    const int version = manifest_.value("version", -1);
    if (version != kArchiveVersion) {
      throw VersionError("archive version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kArchiveVersion) + ")");
    }
    Sha256 h;
    for (const auto& b : manifest_.at("blobs")) {
      const std::string file = b.at("file");
      const size_t expect = b.at("bytes");
      std::ifstream bin(dir / file, std::ios::binary);
      if (!bin) throw TruncatedError("missing blob " + file);
      std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
      if (bytes.size() < expect) {
        throw TruncatedError("blob " + file + " holds " + std::to_string(bytes.size()) + " of " +
                             std::to_string(expect) + " bytes");
      }
      if (bytes.size() != expect || sha256_hex(bytes) != b.at("sha256").get<std::string>()) {
        throw DigestError("blob " + file + " does not match its recorded sha256");
      }
      h.update(b.at("sha256").get<std::string>());
      data_.push_back(from_le_bytes(bytes));
    }
    if (h.hex() != manifest_.value("digest", "")) throw DigestError("manifest digest does not cover the blobs");
  }

  const json& manifest() const { return manifest_; }

  std::vector<float> vec(const json& ref) const {
    const size_t idx = ref.at("blob");
    if (idx >= data_.size()) throw ArchiveError("blob index " + std::to_string(idx) + " out of range");
    const Shape shape = ref.at("shape").get<Shape>();
    if (static_cast<size_t>(shape_numel(shape)) != data_[idx].size()) {
      throw TruncatedError("blob " + std::to_string(idx) + " has " + std::to_string(data_[idx].size()) +
                           " values for shape " + shape_str(shape));
    }
    return data_[idx];
  }
  Tensor tensor(const json& ref, bool requires_grad) const {
    return Tensor::from(ref.at("shape").get<Shape>(), vec(ref), requires_grad);
  }

 private:
  fs::path dir_;
  json manifest_;
  std::vector<std::vector<float>> data_;
};

fs::path prepare(const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("blob_", 0) == 0 && e.path().extension() == ".bin") fs::remove(e.path());
  }
  return dir;
}

json quantizer_json(const QuantizerState& q, BlobWriter& w) {
  return {{"bits", q.bits()},
          {"granularity", q.granularity() == Granularity::kPerChannel ? "per_channel" : "per_layer"},
          {"frozen", q.frozen()},
          {"observed", q.observed()},
          {"lower", w.add(q.lower())},
          {"upper", w.add(q.upper())},
          {"observer_min", w.add(q.observer_min())},
          {"observer_max", w.add(q.observer_max())}};
}

QuantizerState quantizer_from(const json& j, const BlobReader& r) {
  const std::string g = j.at("granularity");
  if (g != "per_channel" && g != "per_layer") throw ArchiveError("unknown granularity '" + g + "'");
  return QuantizerState::restore(j.at("bits"), g == "per_channel" ? Granularity::kPerChannel : Granularity::kPerLayer,
                                 j.at("frozen"), j.at("observed"), r.vec(j.at("lower")), r.vec(j.at("upper")),
                                 r.vec(j.at("observer_min")), r.vec(j.at("observer_max")));
}

json base_manifest(const char* kind) { return {{"format", kFormat}, {"version", kArchiveVersion}, {"kind", kind}}; }

}  // namespace

void save_model(const LayerGraph& graph, const fs::path& dir) {
  BlobWriter w(prepare(dir));
  json m = base_manifest("layer_graph");
  json layers = json::array();
  for (const auto& l : graph.layers) {
    json jl = {{"name", l.name},       {"kind", layer_kind_name(l.kind)}, {"inputs", l.inputs},
               {"stride", l.stride},   {"padding", l.padding},            {"bn_stats", !l.buffers.empty()}};
    json params = json::object(), buffers = json::object();
    for (const auto& [k, t] : l.params) {
      params[k] = w.add(t);
      params[k]["requires_grad"] = t.requires_grad();
    }
    for (const auto& [k, t] : l.buffers) buffers[k] = w.add(t);
    jl["params"] = params;
    jl["buffers"] = buffers;
    if (l.weight_quant) jl["weight_quant"] = quantizer_json(*l.weight_quant, w);
    if (l.act_quant) jl["act_quant"] = quantizer_json(*l.act_quant, w);
    layers.push_back(jl);
  }
  m["graph"] = {{"spec", graph.spec},
                {"num_classes", graph.num_classes},
                {"backbone_index", graph.backbone_index},
                {"mode", mode_name(graph.mode)},
                {"layers", layers}};
  w.finish(m);
}

LayerGraph load_model(const fs::path& dir) {
  BlobReader r(dir);
  const json& m = r.manifest();
  if (m.value("kind", "") != "layer_graph") throw ArchiveError(dir.string() + " does not hold a layer graph");
  const json& jg = m.at("graph");
  LayerGraph g;
  g.spec = jg.at("spec");
  g.num_classes = jg.at("num_classes");
  g.backbone_index = jg.at("backbone_index");
  g.mode = jg.at("mode") == "train" ? Mode::kTrain : Mode::kEval;
  for (const auto& jl : jg.at("layers")) {
    Layer l;
    l.kind = parse_layer_kind(jl.at("kind"));
    l.name = jl.at("name");
    l.inputs = jl.at("inputs").get<std::vector<int>>();
    l.stride = jl.at("stride");
    l.padding = jl.at("padding");
    for (const auto& [k, ref] : jl.at("params").items()) l.params[k] = r.tensor(ref, ref.value("requires_grad", true));
    for (const auto& [k, ref] : jl.at("buffers").items()) l.buffers[k] = r.tensor(ref, false);
    if (jl.contains("weight_quant")) l.weight_quant = quantizer_from(jl.at("weight_quant"), r);
    if (jl.contains("act_quant")) l.act_quant = quantizer_from(jl.at("act_quant"), r);
    g.layers.push_back(std::move(l));
  }
  return g;
}

void save_generator(const GeneratorNet& generator, const fs::path& dir) {
  BlobWriter w(prepare(dir));
  json m = base_manifest("generator");
  const GeneratorConfig& c = generator.config();
  m["config"] = {{"num_classes", c.num_classes},
                 {"z_dim", c.z_dim},
                 {"grid", c.grid},
                 {"init_size", c.init_size},
                 {"stem_channels", c.stem_channels},
                 {"body_channels1", c.body_channels1},
                 {"body_channels2", c.body_channels2},
                 {"out_channels", c.out_channels},
                 {"fusion", fusion_path_name(c.fusion)},
                 {"label_smoothing", c.label_smoothing},
                 {"max_pool_channels", c.max_pool_channels},
                 {"leaky_slope", c.leaky_slope}};
  json params = json::object();
  for (const auto& [k, t] : generator.named_parameters()) params[k] = w.add(t);
  m["params"] = params;
  w.finish(m);
}

GeneratorNet load_generator(const fs::path& dir) {
  BlobReader r(dir);
  const json& m = r.manifest();
  if (m.value("kind", "") != "generator") throw ArchiveError(dir.string() + " does not hold a generator");
  const json& jc = m.at("config");
  GeneratorConfig c;
  c.num_classes = jc.at("num_classes");
  c.z_dim = jc.at("z_dim");
  c.grid = jc.at("grid");
  c.init_size = jc.at("init_size");
  c.stem_channels = jc.at("stem_channels");
  c.body_channels1 = jc.at("body_channels1");
  c.body_channels2 = jc.at("body_channels2");
  c.out_channels = jc.at("out_channels");
  c.fusion = parse_fusion_path(jc.at("fusion"));
  c.label_smoothing = jc.at("label_smoothing");
  c.max_pool_channels = jc.at("max_pool_channels");
  c.leaky_slope = jc.at("leaky_slope");
  GeneratorNet g(c, 0);
  auto& params = g.named_parameters();
  const json& jp = m.at("params");
  if (jp.size() != params.size()) throw ArchiveError("generator archive parameter set does not match its config");
  for (auto& [k, t] : params) {
    if (!jp.contains(k)) throw ArchiveError("generator archive lacks parameter '" + k + "'");
    Tensor loaded = r.tensor(jp.at(k), true);
    if (loaded.shape() != t.shape()) throw ArchiveError("generator parameter '" + k + "' has the wrong shape");
    t = loaded;
  }
  return g;
}

std::string archive_kind(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw ArchiveError("missing manifest " + (dir / kManifest).string());
  return json::parse(in).value("kind", "");
}

}  // namespace acq
