#include "co2net/model.hpp"

#include "co2net/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace co2net {

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "ccm") return FusionMode::ccm;
  if (s == "add") return FusionMode::add;
  if (s == "concat") return FusionMode::concat;
  if (s == "se") return FusionMode::se;
  throw ConfigError("unknown fusion mode '" + s + "' (expected ccm|add|concat|se)");
}

RoleMode parse_role_mode(const std::string& s) {
  if (s == "global_local") return RoleMode::global_local;
  if (s == "local_global") return RoleMode::local_global;
  if (s == "local_local") return RoleMode::local_local;
  throw ConfigError("unknown role mode '" + s + "' (expected global_local|local_global|local_local)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::ccm: return "ccm";
    case FusionMode::add: return "add";
    case FusionMode::concat: return "concat";
    case FusionMode::se: return "se";
  }
  return "?";
}

std::string to_string(RoleMode m) {
  switch (m) {
    case RoleMode::global_local: return "global_local";
    case RoleMode::local_global: return "local_global";
    case RoleMode::local_local: return "local_local";
  }
  return "?";
}

std::vector<Index> ModelConfig::attn_dims() const {
  std::vector<Index> d(attn_kernels.size(), hidden);
  if (!d.empty()) d.back() = 1;
  return d;
}

std::vector<Index> ModelConfig::cls_dims() const {
  std::vector<Index> d(cls_kernels.size(), hidden);
  if (!d.empty()) d.back() = num_classes + 1;
  return d;
}

void ModelConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("model: feature_dim must be positive");
  if (num_classes < 1) throw ConfigError("model: num_classes must be positive");
  if (hidden < 1) throw ConfigError("model: hidden must be positive");
  if (attn_kernels.empty() || cls_kernels.empty()) throw ConfigError("model: conv stacks need at least one layer");
  for (const auto* ks : {&attn_kernels, &cls_kernels})
    for (Index k : *ks)
      if (k < 1 || k % 2 == 0) throw ConfigError("model: kernel sizes must be odd and positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model: dropout_p must lie in [0,1)");
}

ConvLayer Co2Net::make_layer(const std::string& name, Index kernel, Index din, Index dout, Rng& rng) {
  ConvLayer layer;
  layer.kernel = kernel;
  layer.weight = &store_.add(name + "/weight", {kernel, din, dout});
  layer.bias = &store_.add(name + "/bias", {dout});
  xavier_uniform(*layer.weight, kernel * din, kernel * dout, rng);
  return layer;
}

ConvStack Co2Net::make_stack(const std::string& name, const std::vector<Index>& kernels, Index din,
                             const std::vector<Index>& dims, Rng& rng) {
  ConvStack stack;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    stack.layers.push_back(make_layer(name + "/conv" + std::to_string(i), kernels[i], din, dims[i], rng));
    din = dims[i];
  }
  return stack;
}

Co2Net::Co2Net(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const Index D = config_.feature_dim;
  ccm_rgb.global = make_layer("ccm_rgb/global", 1, D, D, rng);
  ccm_rgb.local = make_layer("ccm_rgb/local", 1, D, D, rng);
  ccm_flow.global = make_layer("ccm_flow/global", 1, D, D, rng);
  ccm_flow.local = make_layer("ccm_flow/local", 1, D, D, rng);
  attn_rgb = make_stack("attn_rgb", config_.attn_kernels, D, config_.attn_dims(), rng);
  attn_flow = make_stack("attn_flow", config_.attn_kernels, D, config_.attn_dims(), rng);
  classifier = make_stack("classifier", config_.cls_kernels, 2 * D, config_.cls_dims(), rng);
}

Var apply_conv(ForwardContext& ctx, const ConvLayer& layer, const Var& x) {
  return temporal_conv(x, ctx.param(*layer.weight), ctx.param(*layer.bias), layer.kernel);
}

Var apply_stack(ForwardContext& ctx, const ConvStack& stack, const Var& x) {
  Var h = x;
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    h = apply_conv(ctx, stack.layers[i], h);
    if (i + 1 < stack.layers.size()) {
      h = relu(h);
      if (ctx.train) {
        if (ctx.rng == nullptr) throw ConfigError("train-mode forward needs an rng");
        h = dropout(h, ctx.dropout_p, true, *ctx.rng);
      }
    }
  }
  return h;
}

namespace {

void require_pair(const Var& main, const Var& aux) {
  if (main.rows() == 0) throw EmptySequenceError("ccm: empty sequence");
  if (main.rows() != aux.rows()) throw DimensionError("ccm: main/aux lengths differ", 0);
  if (main.cols() != aux.cols()) throw DimensionError("ccm: main/aux widths differ", 1);
}

GateResult gate_main(const Var& main, const Var& m) {
  GateResult r;
  r.gate = sigmoid(m);
  r.enhanced = mul(r.gate, main);
  return r;
}

}  // namespace

GateResult ccm_forward(ForwardContext& ctx, const Var& main, const Var& aux, const CcmParams& params) {
  require_pair(main, aux);
  const Var global_desc = apply_conv(ctx, params.global, global_avg_pool(main));  // 1 x D
  const Var local_desc = apply_conv(ctx, params.local, aux);                       // T x D
  return gate_main(main, broadcast_mul_rowvec(local_desc, global_desc));
}

GateResult role_variant_forward(ForwardContext& ctx, const Var& main, const Var& aux, const CcmParams& params,
                                RoleMode role) {
  switch (role) {
    case RoleMode::global_local: return ccm_forward(ctx, main, aux, params);
    case RoleMode::local_global: {
      require_pair(main, aux);
      const Var global_desc = apply_conv(ctx, params.global, global_avg_pool(aux));
      const Var local_desc = apply_conv(ctx, params.local, main);
      return gate_main(main, broadcast_mul_rowvec(local_desc, global_desc));
    }
    case RoleMode::local_local: {
      require_pair(main, aux);
      const Var main_desc = apply_conv(ctx, params.global, main);
      const Var aux_desc = apply_conv(ctx, params.local, aux);
      return gate_main(main, mul(main_desc, aux_desc));
    }
  }
  throw ConfigError("unknown role mode");
}

Var attention_forward(ForwardContext& ctx, const Var& enhanced, const ConvStack& unit) {
  return sigmoid(apply_stack(ctx, unit, enhanced));
}

Var fuse_attention(const Var& a_rgb, const Var& a_flow) {
  if (a_rgb.rows() != a_flow.rows() || a_rgb.cols() != a_flow.cols())
    throw DimensionError("fuse_attention: track lengths differ", 0);
  return scale(add(a_rgb, a_flow), 0.5);
}

Var classify_tcam(ForwardContext& ctx, const Var& fused, const ConvStack& classifier) {
  return apply_stack(ctx, classifier, fused);
}

Var suppress_tcam(const Var& tcam, const Var& a_fused) {
  if (a_fused.cols() != 1 || a_fused.rows() != tcam.rows())
    throw DimensionError("suppress_tcam: attention length does not match T-CAM", 0);
  return broadcast_mul_colvec(tcam, a_fused);
}

ForwardGraph model_forward(ForwardContext& ctx, const VideoRecord& record, Co2Net& net) {
  const ModelConfig& cfg = net.config();
  if (record.rgb.rows() != record.flow.rows()) throw DimensionError(record.id + ": rgb/flow lengths differ", 0);
  if (record.rgb.cols() != cfg.feature_dim || record.flow.cols() != cfg.feature_dim)
    throw DimensionError(record.id + ": feature width does not match model", 1);
  if (record.length() == 0) throw EmptySequenceError(record.id + ": empty video");

  ForwardGraph g;
  g.x_rgb = ctx.tape.constant(record.rgb);
  g.x_flow = ctx.tape.constant(record.flow);
  switch (cfg.fusion) {
    case FusionMode::ccm: {
      const GateResult r = role_variant_forward(ctx, g.x_rgb, g.x_flow, net.ccm_rgb, cfg.role);
      const GateResult f = role_variant_forward(ctx, g.x_flow, g.x_rgb, net.ccm_flow, cfg.role);
      g.x_rgb_enh = r.enhanced;
      g.gate_rgb = r.gate;
      g.x_flow_enh = f.enhanced;
      g.gate_flow = f.gate;
      break;
    }
    case FusionMode::se: {
      const GateResult r = role_variant_forward(ctx, g.x_rgb, g.x_rgb, net.ccm_rgb, cfg.role);
      const GateResult f = role_variant_forward(ctx, g.x_flow, g.x_flow, net.ccm_flow, cfg.role);
      g.x_rgb_enh = r.enhanced;
      g.gate_rgb = r.gate;
      g.x_flow_enh = f.enhanced;
      g.gate_flow = f.gate;
      break;
    }
    case FusionMode::add: {
      const Var s = add(g.x_rgb, g.x_flow);
      g.x_rgb_enh = s;
      g.x_flow_enh = s;
      break;
    }
    case FusionMode::concat:
      g.x_rgb_enh = g.x_rgb;
      g.x_flow_enh = g.x_flow;
      break;
  }
  g.a_rgb = attention_forward(ctx, g.x_rgb_enh, net.attn_rgb);
  g.a_flow = attention_forward(ctx, g.x_flow_enh, net.attn_flow);
  g.a_fused = fuse_attention(g.a_rgb, g.a_flow);
  g.fused_features = concat_cols(g.x_rgb_enh, g.x_flow_enh);
  g.tcam = classify_tcam(ctx, g.fused_features, net.classifier);
  g.tcam_supp = suppress_tcam(g.tcam, g.a_fused);
  return g;
}

ForwardOutput snapshot(const ForwardGraph& g) {
  ForwardOutput o;
  o.x_rgb_enh = g.x_rgb_enh.value();
  o.x_flow_enh = g.x_flow_enh.value();
  o.a_rgb = g.a_rgb.value().col(0);
  o.a_flow = g.a_flow.value().col(0);
  o.a_fused = g.a_fused.value().col(0);
  o.tcam = g.tcam.value();
  o.tcam_supp = g.tcam_supp.value();
  o.fused_features = g.fused_features.value();
  return o;
}

ForwardOutput infer(const VideoRecord& record, Co2Net& net) {
  Tape tape;
  ForwardContext ctx{tape, false, net.config().dropout_p, nullptr};
  return snapshot(model_forward(ctx, record, net));
}

// ---- checkpoint -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'O', '2', 'W'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw DecodeError(std::string("truncated checkpoint reading ") + what, pos_);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParameterStore& store) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const Parameter* p : store.all()) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    const Shape& shape = p->tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (Index e : shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (Index i = 0; i < p->tensor.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(p->tensor.values()[i]));
  }
  return out;
}

void decode_checkpoint(const std::string& bytes, ParameterStore& store) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kCheckpointMagic, 4)) throw DecodeError("bad checkpoint magic, expected CO2W", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) throw DecodeError("unsupported checkpoint version " + std::to_string(version), 4);
  std::size_t loaded = 0;
  while (!r.done()) {
    const std::size_t record_at = r.pos();
    const std::uint32_t name_len = r.u32("name length");
    const std::string name = r.str(name_len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw DecodeError("implausible rank for '" + name + "'", record_at);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(r.u32("extent")));
    Parameter* p = store.find(name);
    if (p == nullptr) throw CompatibilityError("checkpoint parameter '" + name + "' not present in model");
    if (p->tensor.shape() != shape)
      throw CompatibilityError("checkpoint parameter '" + name + "' has shape " + shape_string(shape) +
                               ", model expects " + shape_string(p->tensor.shape()));
    for (Index i = 0; i < p->tensor.size(); ++i) {
      const double v = std::bit_cast<double>(r.u64("values"));
      p->tensor.values()[i] = v;
    }
    ++loaded;
  }
  if (loaded != store.size())
    throw CompatibilityError("checkpoint holds " + std::to_string(loaded) + " parameters, model has " +
                             std::to_string(store.size()));
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(store);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  decode_checkpoint(bytes, store);
}

}  // namespace co2net
