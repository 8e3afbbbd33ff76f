#include "layerprune/architecture.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "layerprune/error.hpp"

namespace layerprune {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

using nlohmann::json;

bool ArchitectureDescriptor::operator==(const ArchitectureDescriptor& o) const {
  return to_json(*this) == to_json(o);
}

namespace {

[[noreturn]] void unsupported(const std::string& msg) { throw Error(ErrorCode::unsupported_architecture, msg); }

std::array<int, 3> parse_input(const json& j) {
  if (!j.contains("input")) return {3, 32, 32};
  auto v = j.at("input").get<std::vector<int>>();
  if (v.size() != 3 || v[0] < 1 || v[1] < 1 || v[2] < 1) unsupported("input must be [channels, height, width]");
  return {v[0], v[1], v[2]};
}

std::vector<int> default_block_widths(BlockType block, int width) {
  return block == BlockType::basic ? std::vector<int>{width, width} : std::vector<int>{width, width, 4 * width};
}

}  // namespace

ArchitectureDescriptor parse_descriptor(const json& j) {
  ArchitectureDescriptor d;
  try {
    const std::string family = j.at("family").get<std::string>();
    d.input = parse_input(j);
    d.num_classes = j.value("num_classes", 10);
    if (d.num_classes < 1) unsupported("num_classes must be positive");
    d.batch_norm = j.value("batch_norm", true);
    if (family == "vgg") {
      d.family = Family::vgg;
      for (const json& tok : j.at("layers")) {
        if (tok.is_string()) {
          if (tok.get<std::string>() != "M") unsupported("unknown layer token " + tok.dump());
          d.layers.push_back({LayerToken::Kind::pool, 0});
        } else {
          const int w = tok.get<int>();
          if (w < 0) unsupported("negative layer width");
          d.layers.push_back({w == 0 ? LayerToken::Kind::removed : LayerToken::Kind::conv, w});
        }
      }
    } else if (family == "resnet") {
      d.family = Family::resnet;
      const std::string block = j.value("block", std::string("basic"));
      if (block == "basic") {
        d.block = BlockType::basic;
      } else if (block == "bottleneck") {
        d.block = BlockType::bottleneck;
      } else {
        unsupported("unknown block type '" + block + "'");
      }
      if (!d.batch_norm) unsupported("residual families require batch norm");
      d.stem_width = j.at("stem").get<int>();
      if (j.contains("blocks")) {
        for (const json& b : j.at("blocks")) {
          BlockSpec s;
          s.widths = b.at("widths").get<std::vector<int>>();
          s.stride = b.value("stride", 1);
          s.removed = b.value("removed", false);
          d.blocks.push_back(std::move(s));
        }
      } else {
        for (const json& st : j.at("stages")) {
          const int width = st.at("width").get<int>();
          const int depth = st.at("depth").get<int>();
          const int stride = st.value("stride", 1);
          for (int i = 0; i < depth; ++i)
            d.blocks.push_back({default_block_widths(d.block, width), i == 0 ? stride : 1, false});
        }
      }
    } else {
      unsupported("unsupported architecture family '" + family + "'");
    }
  } catch (const json::exception& e) {
    unsupported(std::string("malformed architecture descriptor: ") + e.what());
  }
  return d;
}

json to_json(const ArchitectureDescriptor& d) {
  json j;
  j["family"] = to_string(d.family);
  j["input"] = {d.input[0], d.input[1], d.input[2]};
  j["num_classes"] = d.num_classes;
  j["batch_norm"] = d.batch_norm;
  if (d.family == Family::vgg) {
    json layers = json::array();
    for (const LayerToken& t : d.layers) {
      if (t.kind == LayerToken::Kind::pool)
        layers.push_back("M");
      else
        layers.push_back(t.kind == LayerToken::Kind::removed ? 0 : t.width);
    }
    j["layers"] = layers;
  } else {
    j["block"] = d.block == BlockType::basic ? "basic" : "bottleneck";
    j["stem"] = d.stem_width;
    json blocks = json::array();
    for (const BlockSpec& b : d.blocks) {
      json e{{"widths", b.widths}, {"stride", b.stride}};
      if (b.removed) e["removed"] = true;
      blocks.push_back(e);
    }
    j["blocks"] = blocks;
  }
  return j;
}

ArchitectureDescriptor load_descriptor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open architecture descriptor " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::unsupported_architecture, "cannot parse " + path.string() + ": " + e.what());
  }
  return parse_descriptor(j);
}

void save_descriptor(const ArchitectureDescriptor& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << to_json(d).dump(2) << '\n';
}

ArchitectureDescriptor describe(const ModelGraph& graph) {
  ArchitectureDescriptor d;
  d.family = graph.family;
  d.block = graph.block;
  d.batch_norm = graph.batch_norm;
  d.input = graph.input;
  d.num_classes = graph.num_classes;
  std::size_t next = 0;
  if (graph.family == Family::vgg) {
    for (SlotKind s : graph.layout) {
      if (s == SlotKind::pool) {
        d.layers.push_back({LayerToken::Kind::pool, 0});
      } else if (s == SlotKind::removed) {
        d.layers.push_back({LayerToken::Kind::removed, 0});
      } else {
        d.layers.push_back({LayerToken::Kind::conv, graph.units[next++].convs.front().out_channels});
      }
    }
  } else {
    d.stem_width = graph.stem->out_channels;
    int channels = d.stem_width;
    for (SlotKind s : graph.layout) {
      if (s == SlotKind::removed) {
        d.blocks.push_back({std::vector<int>(graph.block == BlockType::basic ? 2 : 3, channels), 1, true});
        continue;
      }
      const PrunableUnit& u = graph.units[next++];
      BlockSpec b;
      for (const Conv& c : u.convs) {
        b.widths.push_back(c.out_channels);
        b.stride = std::max(b.stride, c.stride);
      }
      channels = u.out_channels();
      d.blocks.push_back(std::move(b));
    }
  }
  return d;
}

ArchitectureDescriptor preset_descriptor(std::string_view name, int num_classes) {
  json j;
  auto vgg = [&](std::vector<json> layers, bool bn) {
    return json{{"family", "vgg"}, {"batch_norm", bn}, {"input", {3, 32, 32}}, {"num_classes", num_classes},
                {"layers", layers}};
  };
  auto resnet = [&](const char* block, int stem, std::vector<std::array<int, 3>> stages) {
    json st = json::array();
    for (auto [w, depth, stride] : stages) st.push_back({{"width", w}, {"depth", depth}, {"stride", stride}});
    return json{{"family", "resnet"}, {"block", block}, {"input", {3, 32, 32}}, {"num_classes", num_classes},
                {"stem", stem}, {"stages", st}};
  };
  const std::vector<json> vgg19 = {64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
                                   512, 512, 512, 512, "M", 512, 512, 512, 512, "M"};
  if (name == "vgg19_bn") {
    j = vgg(vgg19, true);
  } else if (name == "vgg19") {
    j = vgg(vgg19, false);
  } else if (name == "resnet56") {
    j = resnet("basic", 16, {{16, 9, 1}, {32, 9, 2}, {64, 9, 2}});
  } else if (name == "toy_vgg") {
    j = vgg({8, 8, "M", 16, 16, "M", 32, 32, "M", 32, 32}, true);
  } else if (name == "toy_vgg_nobn") {
    j = vgg({8, 8, "M", 16, 16, "M", 32, 32, "M", 32, 32}, false);
  } else if (name == "toy_resnet") {
    j = resnet("basic", 8, {{8, 3, 1}, {16, 3, 2}, {32, 3, 2}});
  } else if (name == "toy_bottleneck") {
    j = resnet("bottleneck", 16, {{4, 2, 1}, {8, 2, 2}});
  } else {
    throw Error(ErrorCode::config, "unknown architecture preset '" + std::string(name) + "'");
  }
  return parse_descriptor(j);
}

std::vector<std::string> preset_names() {
  return {"vgg19_bn", "vgg19", "resnet56", "toy_vgg", "toy_vgg_nobn", "toy_resnet", "toy_bottleneck"};
}

namespace {

Conv make_conv(int in, int out, int k, int stride, int padding, bool bn, std::mt19937_64* rng) {
  Conv c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = k;
  c.stride = stride;
  c.padding = padding;
  if (rng) {
    c.weight = gaussian_tensor({out, in, k, k}, std::sqrt(2.0 / (static_cast<double>(in) * k * k)), *rng);
  } else {
    c.weight = Tensor({out, in, k, k});
  }
  if (bn)
    c.bn = BatchNorm(out);
  else
    c.bias = Tensor({out});
  return c;
}

ModelGraph instantiate_impl(const ArchitectureDescriptor& d, std::mt19937_64* rng) {
  ModelGraph g;
  g.family = d.family;
  g.block = d.block;
  g.batch_norm = d.batch_norm;
  g.input = d.input;
  g.num_classes = d.num_classes;
  int channels = d.input[0];
  int h = d.input[1], w = d.input[2];
  int origin = 0;
  if (d.family == Family::vgg) {
    for (const LayerToken& t : d.layers) {
      switch (t.kind) {
        case LayerToken::Kind::pool:
          h /= 2;
          w /= 2;
          if (h < 1 || w < 1) unsupported("max pooling collapses the feature map");
          g.layout.push_back(SlotKind::pool);
          break;
        case LayerToken::Kind::removed:
          g.layout.push_back(SlotKind::removed);
          ++origin;
          break;
        case LayerToken::Kind::conv: {
          PrunableUnit u;
          u.kind = UnitKind::conv_layer;
          u.origin = origin++;
          u.convs.push_back(make_conv(channels, t.width, 3, 1, 1, d.batch_norm, rng));
          channels = t.width;
          g.units.push_back(std::move(u));
          g.layout.push_back(SlotKind::unit);
          break;
        }
      }
    }
  } else {
    if (d.stem_width < 1) unsupported("stem width must be positive");
    g.stem = make_conv(channels, d.stem_width, 3, 1, 1, true, rng);
    channels = d.stem_width;
    const std::size_t expected = d.block == BlockType::basic ? 2 : 3;
    for (const BlockSpec& b : d.blocks) {
      if (b.widths.size() != expected) unsupported("block has " + std::to_string(b.widths.size()) + " convs");
      for (int wdt : b.widths)
        if (wdt < 1) unsupported("block widths must be positive");
      if (b.stride != 1 && b.stride != 2) unsupported("block stride must be 1 or 2");
      if (b.removed) {
        if (b.stride != 1) unsupported("a removed block must have been an identity block");
        g.layout.push_back(SlotKind::removed);
        ++origin;
        continue;
      }
      PrunableUnit u;
      u.kind = UnitKind::residual_block;
      u.origin = origin++;
      if (d.block == BlockType::basic) {
        u.convs.push_back(make_conv(channels, b.widths[0], 3, b.stride, 1, true, rng));
        u.convs.push_back(make_conv(b.widths[0], b.widths[1], 3, 1, 1, true, rng));
      } else {
        u.convs.push_back(make_conv(channels, b.widths[0], 1, 1, 0, true, rng));
        u.convs.push_back(make_conv(b.widths[0], b.widths[1], 3, b.stride, 1, true, rng));
        u.convs.push_back(make_conv(b.widths[1], b.widths[2], 1, 1, 0, true, rng));
      }
      const int out = b.widths.back();
      if (b.stride != 1 || channels != out) {
        u.shortcut = ShortcutKind::projection;
        u.projection = make_conv(channels, out, 1, b.stride, 0, true, rng);
      } else {
        u.shortcut = ShortcutKind::identity;
      }
      h = (h - 1) / b.stride + 1;
      w = (w - 1) / b.stride + 1;
      channels = out;
      g.units.push_back(std::move(u));
      g.layout.push_back(SlotKind::unit);
    }
  }
  if (g.units.size() < 2)
    unsupported("a supported model needs at least two prunable units, found " + std::to_string(g.units.size()));
  g.classifier.weight = Tensor({d.num_classes, channels});
  g.classifier.bias = Tensor({d.num_classes});
  if (rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    g.classifier.weight = uniform_tensor({d.num_classes, channels}, -bound, bound, *rng);
    g.classifier.bias = uniform_tensor({d.num_classes}, -bound, bound, *rng);
  }
  g.refresh_indices();
  return g;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::shape_mismatch, "truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kMagic{"LPCKPT\x01\n", 8};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::pair<std::string, TensorMap> decode_all(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw Error(ErrorCode::shape_mismatch, "not a layerprune checkpoint");
  const auto desc_len = r.get<std::uint64_t>();
  std::string desc(r.take(desc_len));
  const auto count = r.get<std::uint32_t>();
  TensorMap tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.take(name_len));
    const auto ndim = r.get<std::uint32_t>();
    std::vector<int> shape(ndim);
    for (auto& s : shape) s = r.get<std::int32_t>();
    Tensor t(shape);
    auto raw = r.take(t.size() * sizeof(double));
    std::memcpy(t.data(), raw.data(), raw.size());
    tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw Error(ErrorCode::shape_mismatch, "trailing bytes in checkpoint");
  return {std::move(desc), std::move(tensors)};
}

}  // namespace

ModelGraph instantiate(const ArchitectureDescriptor& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return instantiate_impl(d, &rng);
}

std::string serialize(const ModelGraph& graph) {
  std::string out(kMagic);
  const std::string desc = to_json(describe(graph)).dump();
  put<std::uint64_t>(out, desc.size());
  out += desc;
  const auto tensors = graph.named_tensors();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (int s : t->shape()) put<std::int32_t>(out, s);
    out.append(reinterpret_cast<const char*>(t->data()), t->size() * sizeof(double));
  }
  return out;
}

std::string encode_tensors(const ModelGraph& graph) { return serialize(graph); }

TensorMap decode_tensors(std::string_view bytes) { return decode_all(bytes).second; }

ModelGraph deserialize(std::string_view bytes) {
  auto [desc, tensors] = decode_all(bytes);
  return build_graph(tensors, parse_descriptor(json::parse(desc)));
}

void write_checkpoint(const ModelGraph& graph, const std::filesystem::path& path) {
  write_file(path, serialize(graph));
}

TensorMap read_checkpoint(const std::filesystem::path& path) { return decode_tensors(read_file(path)); }

ModelGraph build_graph(const TensorMap& checkpoint, const ArchitectureDescriptor& descriptor) {
  ModelGraph g = instantiate_impl(descriptor, nullptr);
  std::size_t used = 0;
  for (auto& [name, t] : g.named_tensors()) {
    auto it = checkpoint.find(name);
    if (it == checkpoint.end()) throw Error(ErrorCode::shape_mismatch, "checkpoint lacks tensor " + name);
    if (it->second.shape() != t->shape())
      throw Error(ErrorCode::shape_mismatch, "tensor " + name + " stored as " + shape_string(it->second.shape()) +
                                                 ", descriptor implies " + shape_string(t->shape()));
    *t = it->second;
    ++used;
  }
  if (used != checkpoint.size())
    throw Error(ErrorCode::shape_mismatch, "checkpoint holds " + std::to_string(checkpoint.size() - used) +
                                               " tensors the descriptor does not account for");
  return g;
}

void save_model(const ModelGraph& graph, const std::filesystem::path& checkpoint,
                const std::filesystem::path& descriptor) {
  write_checkpoint(graph, checkpoint);
  save_descriptor(describe(graph), descriptor);
}

ModelGraph load_model(const std::filesystem::path& checkpoint, const std::filesystem::path& descriptor) {
  return build_graph(read_checkpoint(checkpoint), load_descriptor(descriptor));
}

std::filesystem::path descriptor_path_for(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".arch.json");
  return p;
}

json to_json(const PrunePlan& plan) {
  json filters = json::object();
  for (const auto& [u, fs] : plan.removed_filters) filters[std::to_string(u)] = std::vector<int>(fs.begin(), fs.end());
  return json{{"criterion", plan.criterion},
              {"mode", to_string(plan.mode)},
              {"removed_units", std::vector<int>(plan.removed_units.begin(), plan.removed_units.end())},
              {"removed_filters", filters},
              {"budget", {{"kind", to_string(plan.budget.kind)}, {"value", plan.budget.value}}},
              {"seed", plan.seed}};
}

PrunePlan plan_from_json(const json& j) {
  PrunePlan p;
  try {
    p.criterion = j.value("criterion", std::string());
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "layers")
      p.mode = PlanMode::layers;
    else if (mode == "filters")
      p.mode = PlanMode::filters;
    else
      throw Error(ErrorCode::config, "unknown plan mode '" + mode + "'");
    for (int u : j.value("removed_units", std::vector<int>{})) p.removed_units.insert(u);
    if (j.contains("removed_filters"))
      for (const auto& [k, v] : j.at("removed_filters").items())
        for (int f : v.get<std::vector<int>>()) p.removed_filters[std::stoi(k)].insert(f);
    if (j.contains("budget")) {
      p.budget.kind = parse_budget_kind(j.at("budget").at("kind").get<std::string>());
      p.budget.value = j.at("budget").at("value").get<double>();
    }
    p.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("malformed plan: ") + e.what());
  }
  if (p.mode == PlanMode::layers && !p.removed_filters.empty())
    throw Error(ErrorCode::invalid_plan, "plan mixes layer and filter removals");
  if (p.mode == PlanMode::filters && !p.removed_units.empty())
    throw Error(ErrorCode::invalid_plan, "plan mixes layer and filter removals");
  return p;
}

}  // namespace layerprune
