#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "contactsense/graph.hpp"
#include "contactsense/tensor.hpp"
#include "contactsense/types.hpp"

namespace contactsense {

enum class RnnKind { GRU, LSTM };

const char* to_string(RnnKind kind);

// Stacked recurrent classifier: num_layers cells of hidden_size, dropout
// after every recurrent layer except the last, then linear + softmax on the
// last step's hidden state.
struct RnnSpec {
  RnnKind kind = RnnKind::GRU;
  int num_layers = 3;
  int hidden_size = 40;
  double dropout_p = 0.4;
  int input_features = kFeatureCols;
  int num_classes = kNumClasses;

  void validate() const;
};

// Encoder-only transformer with a temporal conv + variate-collapsing spatial
// conv embedding, fixed sinusoidal position encoding with series-length
// scaled frequencies, per-head learnable relative position scalars added to
// the normalized attention weights, and avg+max pooling into the classifier
// head.
struct TransformerSpec {
  int d_model = 8;
  int num_heads = 1;
  int num_blocks = 1;
  int ffn_dim = 32;
  double dropout_p = 0.2;
  double l2_lambda = 0.2;
  int conv_kernel = 7;
  int conv_stride = 2;
  int conv_padding = 3;
  bool dropout_on_attention = true;
  bool dropout_on_embedding = true;
  int input_features = kFeatureCols;
  int input_steps = kWindowRows;
  int num_classes = kNumClasses;

  int embed_len() const {  // sequence length after the temporal conv
    return (input_steps + 2 * conv_padding - conv_kernel) / conv_stride + 1;
  }
  void validate() const;
};

using ModelSpec = std::variant<RnnSpec, TransformerSpec>;

std::string family_name(const ModelSpec& spec);  // "gru" | "lstm" | "transformer"

struct ParamInfo {
  enum class Init { Uniform, Zero, One };
  std::string name;
  std::vector<int> shape;
  Init init = Init::Uniform;
  int fan_in = 0;  // uniform bound is 1/sqrt(fan_in)
};

// Golden table: every learnable parameter, its shape, and how it is
// initialized, fully determined by the spec.
std::vector<ParamInfo> parameter_shape_table(const ModelSpec& spec);

struct ModelState {
  ModelSpec spec;
  std::map<std::string, Tensor> parameters;
  std::uint64_t rng_seed = 0;
};

ModelState init_model(const ModelSpec& spec, std::uint64_t seed);
std::int64_t parameter_count(const ModelState& state);

using ParamVars = std::map<std::string, VarId>;

// Parameters as gradient-tracked graph leaves, keyed like state.parameters.
ParamVars make_param_vars(Graph& g, const ModelState& state);

// Class probabilities (batch x num_classes) for a (batch, 40, 21) input.
VarId rnn_forward_vars(Graph& g, const RnnSpec& spec, const ParamVars& params, VarId x,
                       bool train);
VarId transformer_forward_vars(Graph& g, const TransformerSpec& spec, const ParamVars& params,
                               VarId x, bool train);
VarId model_forward_vars(Graph& g, const ModelSpec& spec, const ParamVars& params, VarId x,
                         bool train);

// Convenience single-shot forward on a fresh graph. dropout_seed feeds the
// graph RNG (only consulted when train is true).
Tensor rnn_forward(const ModelState& state, const Tensor& x, bool train,
                   std::uint64_t dropout_seed = 0);
Tensor transformer_forward(const ModelState& state, const Tensor& x, bool train,
                           std::uint64_t dropout_seed = 0);
Tensor model_forward(const ModelState& state, const Tensor& x, bool train,
                     std::uint64_t dropout_seed = 0);

// Position encoding with frequencies omega_k = 10000^(-2k/d_model) * d_model / L
// in the alternating sin/cos layout: out(pos, 2k) = sin(pos*omega_k),
// out(pos, 2k+1) = cos(pos*omega_k). d_model must be even.
Tensor tape_encoding(int length, int d_model);

struct ErpeParams {
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor rel_weights;  // (heads, 2L-1), index i-j+L-1
};

// Relative-position attention on one (L, d_model) sequence:
//   alpha_i = sum_j (A_ij + w_{i-j}) v_j
// with A the scaled-dot-product softmax weights; per-head, heads
// concatenated. No output projection.
Tensor erpe_attention(const Tensor& x, const ErpeParams& params, int heads);

// Self-describing binary container (magic, versioned JSON spec header,
// named float64 little-endian parameter blobs). See docs/model-format.md.
void save_model(const ModelState& state, const std::string& path);
ModelState load_model(const std::string& path);

}  // namespace contactsense
