#include "contactsense/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "contactsense/errors.hpp"
#include "contactsense/serialize.hpp"

namespace contactsense {

const char* to_string(RnnKind kind) { return kind == RnnKind::GRU ? "gru" : "lstm"; }

void RnnSpec::validate() const {
  if (num_layers < 1) throw UsageError("rnn: num_layers must be >= 1");
  if (hidden_size < 1) throw UsageError("rnn: hidden_size must be >= 1");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw UsageError("rnn: dropout_p must be in [0,1)");
  if (input_features < 1 || num_classes < 2) throw UsageError("rnn: bad input/output sizes");
}

void TransformerSpec::validate() const {
  if (d_model < 1 || num_heads < 1) throw UsageError("transformer: bad d_model/num_heads");
  if (d_model % num_heads != 0)
    throw UsageError("transformer: d_model (" + std::to_string(d_model) +
                     ") must be divisible by num_heads (" + std::to_string(num_heads) + ")");
  if (d_model % 2 != 0) throw UsageError("transformer: d_model must be even");
  if (num_blocks < 1 || ffn_dim < 1) throw UsageError("transformer: bad num_blocks/ffn_dim");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw UsageError("transformer: dropout_p must be in [0,1)");
  if (conv_kernel < 1 || conv_stride < 1 || conv_padding < 0)
    throw UsageError("transformer: bad conv geometry");
  if (input_steps + 2 * conv_padding < conv_kernel)
    throw UsageError("transformer: conv kernel longer than padded input");
  if (embed_len() < 1) throw UsageError("transformer: empty embedding sequence");
}

std::string family_name(const ModelSpec& spec) {
  if (const auto* rnn = std::get_if<RnnSpec>(&spec)) return to_string(rnn->kind);
  return "transformer";
}

std::vector<ParamInfo> parameter_shape_table(const ModelSpec& spec) {
  std::vector<ParamInfo> table;
  if (const auto* rnn = std::get_if<RnnSpec>(&spec)) {
    rnn->validate();
    const int h = rnn->hidden_size;
    const int gates = rnn->kind == RnnKind::GRU ? 3 : 4;
    for (int l = 0; l < rnn->num_layers; ++l) {
      const int in = l == 0 ? rnn->input_features : h;
      const std::string prefix = "rnn.l" + std::to_string(l) + ".";
      table.push_back({prefix + "w_ih", {in, gates * h}, ParamInfo::Init::Uniform, in});
      table.push_back({prefix + "w_hh", {h, gates * h}, ParamInfo::Init::Uniform, h});
      if (rnn->kind == RnnKind::GRU) {
        // Two bias vectors: the candidate gate applies r elementwise to the
        // hidden path, so its two biases are not mergeable.
        table.push_back({prefix + "b_ih", {gates * h}, ParamInfo::Init::Zero, 0});
        table.push_back({prefix + "b_hh", {gates * h}, ParamInfo::Init::Zero, 0});
      } else {
        table.push_back({prefix + "b", {gates * h}, ParamInfo::Init::Zero, 0});
      }
    }
    table.push_back({"fc.w", {h, rnn->num_classes}, ParamInfo::Init::Uniform, h});
    table.push_back({"fc.b", {rnn->num_classes}, ParamInfo::Init::Zero, 0});
    return table;
  }

  const auto& tf = std::get<TransformerSpec>(spec);
  tf.validate();
  const int d = tf.d_model;
  const int l_embed = tf.embed_len();
  table.push_back({"embed.temporal.w", {d, 1, tf.conv_kernel}, ParamInfo::Init::Uniform,
                   tf.conv_kernel});
  table.push_back({"embed.temporal.b", {d}, ParamInfo::Init::Zero, 0});
  table.push_back({"embed.spatial.w", {tf.input_features * d, d}, ParamInfo::Init::Uniform,
                   tf.input_features * d});
  table.push_back({"embed.spatial.b", {d}, ParamInfo::Init::Zero, 0});
  for (int b = 0; b < tf.num_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    for (const char* name : {"wq", "wk", "wv", "wo"})
      table.push_back({prefix + "attn." + name, {d, d}, ParamInfo::Init::Uniform, d});
    for (const char* name : {"bq", "bk", "bv", "bo"})
      table.push_back({prefix + "attn." + name, {d}, ParamInfo::Init::Zero, 0});
    table.push_back(
        {prefix + "attn.rel_w", {tf.num_heads, 2 * l_embed - 1}, ParamInfo::Init::Zero, 0});
    table.push_back({prefix + "ln1.gamma", {d}, ParamInfo::Init::One, 0});
    table.push_back({prefix + "ln1.beta", {d}, ParamInfo::Init::Zero, 0});
    table.push_back({prefix + "ffn.w1", {d, tf.ffn_dim}, ParamInfo::Init::Uniform, d});
    table.push_back({prefix + "ffn.b1", {tf.ffn_dim}, ParamInfo::Init::Zero, 0});
    table.push_back({prefix + "ffn.w2", {tf.ffn_dim, d}, ParamInfo::Init::Uniform, tf.ffn_dim});
    table.push_back({prefix + "ffn.b2", {d}, ParamInfo::Init::Zero, 0});
    table.push_back({prefix + "ln2.gamma", {d}, ParamInfo::Init::One, 0});
    table.push_back({prefix + "ln2.beta", {d}, ParamInfo::Init::Zero, 0});
  }
  table.push_back({"head.w", {2 * d, tf.num_classes}, ParamInfo::Init::Uniform, 2 * d});
  table.push_back({"head.b", {tf.num_classes}, ParamInfo::Init::Zero, 0});
  return table;
}

ModelState init_model(const ModelSpec& spec, std::uint64_t seed) {
  ModelState state;
  state.spec = spec;
  state.rng_seed = seed;
  std::mt19937_64 rng(seed);
  for (const ParamInfo& info : parameter_shape_table(spec)) {
    Tensor t(info.shape);
    switch (info.init) {
      case ParamInfo::Init::Uniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(info.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (int i = 0; i < t.size(); ++i) t[i] = dist(rng);
        break;
      }
      case ParamInfo::Init::Zero:
        break;
      case ParamInfo::Init::One:
        for (int i = 0; i < t.size(); ++i) t[i] = 1.0;
        break;
    }
    state.parameters.emplace(info.name, std::move(t));
  }
  return state;
}

std::int64_t parameter_count(const ModelState& state) {
  std::int64_t n = 0;
  for (const auto& [name, tensor] : state.parameters) n += tensor.size();
  return n;
}

ParamVars make_param_vars(Graph& g, const ModelState& state) {
  ParamVars vars;
  for (const auto& [name, tensor] : state.parameters) {
    Tensor t = tensor;
    t.requires_grad = true;
    vars.emplace(name, g.leaf(std::move(t)));
  }
  return vars;
}

namespace {

ParamVars make_const_param_vars(Graph& g, const ModelState& state) {
  ParamVars vars;
  for (const auto& [name, tensor] : state.parameters) vars.emplace(name, g.constant(tensor));
  return vars;
}

VarId param(const ParamVars& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw NumericError("missing model parameter \"" + name + "\"");
  return it->second;
}

void check_input(const Tensor& x, int steps, int features, const char* who) {
  if (x.rank() != 3 || x.dim(1) != steps || x.dim(2) != features)
    throw NumericError(std::string(who) + ": expected input (batch," + std::to_string(steps) +
                       "," + std::to_string(features) + "), got " + x.shape_string());
}

// One GRU step; gate layout [r | z | n].
VarId gru_step(Graph& g, VarId xg, VarId h, VarId w_hh, VarId b_hh, int hidden) {
  const VarId hg = g.add(g.matmul(h, w_hh), b_hh);
  const VarId r = g.sigmoid(g.add(g.slice(xg, 1, 0, hidden), g.slice(hg, 1, 0, hidden)));
  const VarId z = g.sigmoid(g.add(g.slice(xg, 1, hidden, hidden), g.slice(hg, 1, hidden, hidden)));
  const VarId n =
      g.tanh(g.add(g.slice(xg, 1, 2 * hidden, hidden), g.mul(r, g.slice(hg, 1, 2 * hidden, hidden))));
  // h' = (1-z)*n + z*h = n + z*(h - n)
  return g.add(n, g.mul(z, g.sub(h, n)));
}

// One LSTM step; gate layout [i | f | g | o]. Returns {h', c'}.
std::pair<VarId, VarId> lstm_step(Graph& g, VarId gates, VarId c, int hidden) {
  const VarId i = g.sigmoid(g.slice(gates, 1, 0, hidden));
  const VarId f = g.sigmoid(g.slice(gates, 1, hidden, hidden));
  const VarId cand = g.tanh(g.slice(gates, 1, 2 * hidden, hidden));
  const VarId o = g.sigmoid(g.slice(gates, 1, 3 * hidden, hidden));
  const VarId c_next = g.add(g.mul(f, c), g.mul(i, cand));
  return {g.mul(o, g.tanh(c_next)), c_next};
}

// Per-head eRPE attention over (B,L,d) projections; heads concatenated,
// no output projection.
VarId erpe_heads(Graph& g, VarId q, VarId k, VarId v, VarId rel_w, int heads, int length,
                 int d_model, double dropout_p, bool attn_dropout, bool train) {
  const int dh = d_model / heads;
  std::vector<VarId> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const VarId qh = heads == 1 ? q : g.slice(q, 2, h * dh, dh);
    const VarId kh = heads == 1 ? k : g.slice(k, 2, h * dh, dh);
    const VarId vh = heads == 1 ? v : g.slice(v, 2, h * dh, dh);
    const VarId scores =
        g.affine(g.matmul(qh, g.transpose(kh, 1, 2)), 1.0 / std::sqrt(static_cast<double>(dh)), 0.0);
    const VarId attn = g.softmax(scores);
    const VarId rel_row = g.reshape(g.slice(rel_w, 0, h, 1), {2 * length - 1});
    VarId weights = g.add(attn, g.relative_position_matrix(rel_row, length));
    if (train && attn_dropout && dropout_p > 0.0) weights = g.dropout(weights, dropout_p, train);
    outputs.push_back(g.matmul(weights, vh));
  }
  return outputs.size() == 1 ? outputs[0] : g.concat(outputs, 2);
}

}  // namespace

VarId rnn_forward_vars(Graph& g, const RnnSpec& spec, const ParamVars& params, VarId x,
                       bool train) {
  spec.validate();
  const Tensor& tx = g.value(x);
  check_input(tx, kWindowRows, spec.input_features, "rnn_forward");
  const int batch = tx.dim(0);
  const int hidden = spec.hidden_size;

  VarId sequence = x;
  VarId last_hidden = -1;
  for (int layer = 0; layer < spec.num_layers; ++layer) {
    const int in = layer == 0 ? spec.input_features : hidden;
    const std::string prefix = "rnn.l" + std::to_string(layer) + ".";
    const VarId w_ih = param(params, prefix + "w_ih");
    const VarId w_hh = param(params, prefix + "w_hh");
    const bool last_layer = layer == spec.num_layers - 1;

    VarId h = g.constant(Tensor({batch, hidden}));
    VarId c = -1;
    if (spec.kind == RnnKind::LSTM) c = g.constant(Tensor({batch, hidden}));

    std::vector<VarId> steps;
    if (!last_layer) steps.reserve(kWindowRows);
    for (int t = 0; t < kWindowRows; ++t) {
      const VarId x_t = g.reshape(g.slice(sequence, 1, t, 1), {batch, in});
      if (spec.kind == RnnKind::GRU) {
        const VarId xg = g.add(g.matmul(x_t, w_ih), param(params, prefix + "b_ih"));
        h = gru_step(g, xg, h, w_hh, param(params, prefix + "b_hh"), hidden);
      } else {
        const VarId gates =
            g.add(g.add(g.matmul(x_t, w_ih), g.matmul(h, w_hh)), param(params, prefix + "b"));
        auto [h_next, c_next] = lstm_step(g, gates, c, hidden);
        h = h_next;
        c = c_next;
      }
      if (!last_layer) steps.push_back(g.reshape(h, {batch, 1, hidden}));
    }

    if (last_layer) {
      last_hidden = h;
    } else {
      sequence = g.concat(steps, 1);
      if (train && spec.dropout_p > 0.0) sequence = g.dropout(sequence, spec.dropout_p, train);
    }
  }

  const VarId logits = g.add(g.matmul(last_hidden, param(params, "fc.w")), param(params, "fc.b"));
  return g.softmax(logits);
}

VarId transformer_forward_vars(Graph& g, const TransformerSpec& spec, const ParamVars& params,
                               VarId x, bool train) {
  spec.validate();
  const Tensor& tx = g.value(x);
  check_input(tx, spec.input_steps, spec.input_features, "transformer_forward");
  const int batch = tx.dim(0);
  const int d = spec.d_model;
  const int variates = spec.input_features;
  const int length = spec.embed_len();

  // Temporal conv, shared across variates: (B,T,V) -> (B*V, 1, T) -> (B*V, d, L).
  const VarId by_variate =
      g.reshape(g.transpose(x, 1, 2), {batch * variates, 1, spec.input_steps});
  const VarId conv = g.conv1d(by_variate, param(params, "embed.temporal.w"),
                              param(params, "embed.temporal.b"), spec.conv_stride,
                              spec.conv_padding);
  // Spatial stage: collapse (variate, channel) per position: (B, L, V*d) @ (V*d, d).
  VarId stacked = g.reshape(conv, {batch, variates, d, length});
  stacked = g.transpose(stacked, 1, 3);  // (B, L, d, V)
  stacked = g.transpose(stacked, 2, 3);  // (B, L, V, d)
  const VarId flattened = g.reshape(stacked, {batch, length, variates * d});
  VarId embed = g.add(g.matmul(flattened, param(params, "embed.spatial.w")),
                      param(params, "embed.spatial.b"));

  embed = g.add(embed, g.constant(tape_encoding(length, d)));
  if (train && spec.dropout_on_embedding && spec.dropout_p > 0.0)
    embed = g.dropout(embed, spec.dropout_p, train);

  for (int b = 0; b < spec.num_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    const VarId q =
        g.add(g.matmul(embed, param(params, prefix + "attn.wq")), param(params, prefix + "attn.bq"));
    const VarId k =
        g.add(g.matmul(embed, param(params, prefix + "attn.wk")), param(params, prefix + "attn.bk"));
    const VarId v =
        g.add(g.matmul(embed, param(params, prefix + "attn.wv")), param(params, prefix + "attn.bv"));
    VarId attn = erpe_heads(g, q, k, v, param(params, prefix + "attn.rel_w"), spec.num_heads,
                            length, d, spec.dropout_p, spec.dropout_on_attention, train);
    attn = g.add(g.matmul(attn, param(params, prefix + "attn.wo")),
                 param(params, prefix + "attn.bo"));
    if (train && spec.dropout_p > 0.0) attn = g.dropout(attn, spec.dropout_p, train);
    embed = g.layer_norm(g.add(embed, attn), param(params, prefix + "ln1.gamma"),
                         param(params, prefix + "ln1.beta"));

    VarId ff = g.relu(
        g.add(g.matmul(embed, param(params, prefix + "ffn.w1")), param(params, prefix + "ffn.b1")));
    ff = g.add(g.matmul(ff, param(params, prefix + "ffn.w2")), param(params, prefix + "ffn.b2"));
    if (train && spec.dropout_p > 0.0) ff = g.dropout(ff, spec.dropout_p, train);
    embed = g.layer_norm(g.add(embed, ff), param(params, prefix + "ln2.gamma"),
                         param(params, prefix + "ln2.beta"));
  }

  const VarId pooled = g.concat({g.mean_axis(embed, 1), g.max_axis(embed, 1)}, 1);
  const VarId logits = g.add(g.matmul(pooled, param(params, "head.w")), param(params, "head.b"));
  return g.softmax(logits);
}

VarId model_forward_vars(Graph& g, const ModelSpec& spec, const ParamVars& params, VarId x,
                         bool train) {
  if (const auto* rnn = std::get_if<RnnSpec>(&spec))
    return rnn_forward_vars(g, *rnn, params, x, train);
  return transformer_forward_vars(g, std::get<TransformerSpec>(spec), params, x, train);
}

namespace {

Tensor forward_once(const ModelState& state, const Tensor& x, bool train,
                    std::uint64_t dropout_seed) {
  Graph g(dropout_seed);
  const ParamVars params = make_const_param_vars(g, state);
  const VarId xv = g.constant(x);
  const VarId probs = model_forward_vars(g, state.spec, params, xv, train);
  return g.value(probs);
}

}  // namespace

Tensor rnn_forward(const ModelState& state, const Tensor& x, bool train,
                   std::uint64_t dropout_seed) {
  if (!std::holds_alternative<RnnSpec>(state.spec))
    throw UsageError("rnn_forward: model is not a recurrent model");
  return forward_once(state, x, train, dropout_seed);
}

Tensor transformer_forward(const ModelState& state, const Tensor& x, bool train,
                           std::uint64_t dropout_seed) {
  if (!std::holds_alternative<TransformerSpec>(state.spec))
    throw UsageError("transformer_forward: model is not a transformer");
  return forward_once(state, x, train, dropout_seed);
}

Tensor model_forward(const ModelState& state, const Tensor& x, bool train,
                     std::uint64_t dropout_seed) {
  return forward_once(state, x, train, dropout_seed);
}

Tensor tape_encoding(int length, int d_model) {
  if (length < 1) throw UsageError("tape_encoding: length must be >= 1");
  if (d_model < 2 || d_model % 2 != 0) throw UsageError("tape_encoding: d_model must be even");
  Tensor out({length, d_model});
  for (int k = 0; k < d_model / 2; ++k) {
    const double omega =
        std::pow(10000.0, -2.0 * k / d_model) * static_cast<double>(d_model) / length;
    for (int pos = 0; pos < length; ++pos) {
      out.at(pos, 2 * k) = std::sin(pos * omega);
      out.at(pos, 2 * k + 1) = std::cos(pos * omega);
    }
  }
  return out;
}

Tensor erpe_attention(const Tensor& x, const ErpeParams& params, int heads) {
  if (x.rank() != 2) throw NumericError("erpe_attention: expected (L,d), got " + x.shape_string());
  const int length = x.dim(0);
  const int d = x.dim(1);
  if (heads < 1 || d % heads != 0)
    throw NumericError("erpe_attention: d_model must be divisible by heads");
  if (params.rel_weights.rank() != 2 || params.rel_weights.dim(0) != heads ||
      params.rel_weights.dim(1) != 2 * length - 1)
    throw NumericError("erpe_attention: relative table must be (" + std::to_string(heads) + "," +
                       std::to_string(2 * length - 1) + "), got " +
                       params.rel_weights.shape_string());

  Graph g;
  const VarId xv = g.constant(Tensor({1, length, d}, x.values()));
  const VarId q = g.add(g.matmul(xv, g.constant(params.wq)), g.constant(params.bq));
  const VarId k = g.add(g.matmul(xv, g.constant(params.wk)), g.constant(params.bk));
  const VarId v = g.add(g.matmul(xv, g.constant(params.wv)), g.constant(params.bv));
  const VarId out = erpe_heads(g, q, k, v, g.constant(params.rel_weights), heads, length, d,
                               0.0, false, false);
  return Tensor({length, d}, g.value(out).values());
}

// ---- persistence ----

namespace {

constexpr char kMagic[6] = {'C', 'S', 'M', 'D', 'L', '\0'};
constexpr std::uint16_t kFormatVersion = 1;

void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_model(const ModelState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open model file for writing: " + path);

  nlohmann::json header = spec_to_json(state.spec);
  header["rng_seed"] = state.rng_seed;
  const std::string header_str = header.dump();

  out.write(kMagic, sizeof(kMagic));
  write_u16(out, kFormatVersion);
  write_u64(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  write_u64(out, state.parameters.size());
  for (const auto& [name, tensor] : state.parameters) {
    write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u16(out, static_cast<std::uint16_t>(tensor.rank()));
    for (int i = 0; i < tensor.rank(); ++i)
      write_u64(out, static_cast<std::uint64_t>(tensor.dim(i)));
    for (int i = 0; i < tensor.size(); ++i) write_f64(out, tensor[i]);
  }
  if (!out) throw DataError("failed writing model file: " + path);
}

ModelState load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);

  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a model file (bad magic): " + path);
  const std::uint16_t version = read_u16(in);
  if (version != kFormatVersion)
    throw DataError("unsupported model format version " + std::to_string(version) + ": " + path);

  const std::uint64_t header_len = read_u64(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated model header: " + path);

  ModelState state;
  nlohmann::json header = nlohmann::json::parse(header_str);
  state.spec = spec_from_json(header);
  state.rng_seed = header.value("rng_seed", std::uint64_t{0});

  const std::uint64_t count = read_u64(in);
  for (std::uint64_t p = 0; p < count; ++p) {
    const std::uint16_t name_len = read_u16(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint16_t rank = read_u16(in);
    std::vector<int> shape(rank);
    for (std::uint16_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(read_u64(in));
    Tensor tensor(shape);
    for (int i = 0; i < tensor.size(); ++i) tensor[i] = read_f64(in);
    if (!in) throw DataError("truncated model parameters: " + path);
    state.parameters.emplace(std::move(name), std::move(tensor));
  }

  // Cross-check against the spec-derived shape table.
  const auto table = parameter_shape_table(state.spec);
  if (table.size() != state.parameters.size())
    throw DataError("model file parameter set does not match its spec: " + path);
  for (const ParamInfo& info : table) {
    const auto it = state.parameters.find(info.name);
    if (it == state.parameters.end() || it->second.shape() != info.shape)
      throw DataError("model file parameter \"" + info.name + "\" missing or misshaped: " + path);
  }
  return state;
}

}  // namespace contactsense
