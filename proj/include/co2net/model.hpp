#pragma once

#include "co2net/autodiff.hpp"
#include "co2net/data.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace co2net {

enum class FusionMode { ccm, add, concat, se };
enum class RoleMode { global_local, local_global, local_local };

FusionMode parse_fusion_mode(const std::string& s);
RoleMode parse_role_mode(const std::string& s);
std::string to_string(FusionMode m);
std::string to_string(RoleMode m);

struct ModelConfig {
  Index feature_dim = 1024;
  int num_classes = 20;
  Index hidden = 512;
  std::vector<Index> attn_kernels{3, 3, 1};
  std::vector<Index> cls_kernels{3, 3, 1};
  double dropout_p = 0.7;
  FusionMode fusion = FusionMode::ccm;
  RoleMode role = RoleMode::global_local;

  /// Output widths: hidden for every layer but the last, which is 1.
  std::vector<Index> attn_dims() const;
  /// Output widths: hidden for every layer but the last, which is C + 1.
  std::vector<Index> cls_dims() const;
  void validate() const;
};

struct ConvLayer {
  Parameter* weight = nullptr;  // K x Din x Dout
  Parameter* bias = nullptr;    // Dout
  Index kernel = 1;
};

/// conv -> relu -> dropout -> ... -> conv (no activation after the last layer).
struct ConvStack {
  std::vector<ConvLayer> layers;
};

/// F^G (global descriptor) and F^L (local descriptor); both kernel-1 D -> D convolutions.
struct CcmParams {
  ConvLayer global;
  ConvLayer local;
};

class Co2Net {
 public:
  Co2Net(const ModelConfig& config, Rng& rng);
  Co2Net(const Co2Net&) = delete;
  Co2Net& operator=(const Co2Net&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  std::vector<Parameter*> parameters() { return store_.all(); }

  CcmParams ccm_rgb;
  CcmParams ccm_flow;
  ConvStack attn_rgb;
  ConvStack attn_flow;
  ConvStack classifier;

 private:
  ConvLayer make_layer(const std::string& name, Index kernel, Index din, Index dout, Rng& rng);
  ConvStack make_stack(const std::string& name, const std::vector<Index>& kernels, Index din,
                       const std::vector<Index>& dims, Rng& rng);

  ModelConfig config_;
  ParameterStore store_;
};

/// Shared state for one forward pass: the tape and the dropout regime.
struct ForwardContext {
  Tape& tape;
  bool train = false;
  double dropout_p = 0.0;
  Rng* rng = nullptr;

  Var param(Parameter& p) { return tape.parameter(p); }
};

struct GateResult {
  Var enhanced;  // T x D
  Var gate;      // T x D, sigmoid(M)
};

Var apply_conv(ForwardContext& ctx, const ConvLayer& layer, const Var& x);
Var apply_stack(ForwardContext& ctx, const ConvStack& stack, const Var& x);

/// Global-context descriptor of `main` times cross-modal local descriptor of
/// `aux`, squashed by a sigmoid into a channel gate on `main`.
GateResult ccm_forward(ForwardContext& ctx, const Var& main, const Var& aux, const CcmParams& params);
GateResult role_variant_forward(ForwardContext& ctx, const Var& main, const Var& aux, const CcmParams& params,
                                RoleMode role);

/// T x 1 foreground probabilities.
Var attention_forward(ForwardContext& ctx, const Var& enhanced, const ConvStack& unit);
Var fuse_attention(const Var& a_rgb, const Var& a_flow);
/// T x (C+1) logits.
Var classify_tcam(ForwardContext& ctx, const Var& fused, const ConvStack& classifier);
Var suppress_tcam(const Var& tcam, const Var& a_fused);

struct ForwardGraph {
  Var x_rgb;
  Var x_flow;
  Var x_rgb_enh;
  Var x_flow_enh;
  Var gate_rgb;   // invalid unless a gating fusion mode ran
  Var gate_flow;
  Var a_rgb;
  Var a_flow;
  Var a_fused;
  Var tcam;
  Var tcam_supp;
  Var fused_features;
};

ForwardGraph model_forward(ForwardContext& ctx, const VideoRecord& record, Co2Net& net);

/// Plain-matrix snapshot of a forward pass.
struct ForwardOutput {
  Matrix x_rgb_enh;
  Matrix x_flow_enh;
  Vector a_rgb;
  Vector a_flow;
  Vector a_fused;
  Matrix tcam;
  Matrix tcam_supp;
  Matrix fused_features;
};

ForwardOutput snapshot(const ForwardGraph& g);
/// Eval-mode forward on all snippets.
ForwardOutput infer(const VideoRecord& record, Co2Net& net);

// Checkpoint: "CO2W", u32 version, then per parameter: u32 name length, name
// bytes, u32 rank, u32 extents, f64 values. All little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ParameterStore& store);
/// Copies values into same-named, same-shaped parameters of `store`.
void decode_checkpoint(const std::string& bytes, ParameterStore& store);
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
void load_checkpoint(const std::filesystem::path& path, ParameterStore& store);

}  // namespace co2net
