#include "contactsense/serialize.hpp"

#include "contactsense/errors.hpp"

namespace contactsense {

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  if (const auto* rnn = std::get_if<RnnSpec>(&spec)) {
    j["family"] = to_string(rnn->kind);
    j["num_layers"] = rnn->num_layers;
    j["hidden_size"] = rnn->hidden_size;
    j["dropout_p"] = rnn->dropout_p;
    j["input_features"] = rnn->input_features;
    j["num_classes"] = rnn->num_classes;
    return j;
  }
  const auto& tf = std::get<TransformerSpec>(spec);
  j["family"] = "transformer";
  j["d_model"] = tf.d_model;
  j["num_heads"] = tf.num_heads;
  j["num_blocks"] = tf.num_blocks;
  j["ffn_dim"] = tf.ffn_dim;
  j["dropout_p"] = tf.dropout_p;
  j["l2_lambda"] = tf.l2_lambda;
  j["conv_kernel"] = tf.conv_kernel;
  j["conv_stride"] = tf.conv_stride;
  j["conv_padding"] = tf.conv_padding;
  j["dropout_on_attention"] = tf.dropout_on_attention;
  j["dropout_on_embedding"] = tf.dropout_on_embedding;
  j["input_features"] = tf.input_features;
  j["input_steps"] = tf.input_steps;
  j["num_classes"] = tf.num_classes;
  return j;
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  try {
    const std::string family = j.at("family").get<std::string>();
    if (family == "gru" || family == "lstm") {
      RnnSpec spec;
      spec.kind = family == "gru" ? RnnKind::GRU : RnnKind::LSTM;
      spec.num_layers = j.value("num_layers", spec.num_layers);
      spec.hidden_size = j.value("hidden_size", spec.hidden_size);
      spec.dropout_p = j.value("dropout_p", spec.dropout_p);
      spec.input_features = j.value("input_features", spec.input_features);
      spec.num_classes = j.value("num_classes", spec.num_classes);
      spec.validate();
      return spec;
    }
    if (family == "transformer") {
      TransformerSpec spec;
      spec.d_model = j.value("d_model", spec.d_model);
      spec.num_heads = j.value("num_heads", spec.num_heads);
      spec.num_blocks = j.value("num_blocks", spec.num_blocks);
      spec.ffn_dim = j.value("ffn_dim", spec.ffn_dim);
      spec.dropout_p = j.value("dropout_p", spec.dropout_p);
      spec.l2_lambda = j.value("l2_lambda", spec.l2_lambda);
      spec.conv_kernel = j.value("conv_kernel", spec.conv_kernel);
      spec.conv_stride = j.value("conv_stride", spec.conv_stride);
      spec.conv_padding = j.value("conv_padding", spec.conv_padding);
      spec.dropout_on_attention = j.value("dropout_on_attention", spec.dropout_on_attention);
      spec.dropout_on_embedding = j.value("dropout_on_embedding", spec.dropout_on_embedding);
      spec.input_features = j.value("input_features", spec.input_features);
      spec.input_steps = j.value("input_steps", spec.input_steps);
      spec.num_classes = j.value("num_classes", spec.num_classes);
      spec.validate();
      return spec;
    }
    throw DataError("unknown model family: \"" + family + "\"");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad model spec json: ") + e.what());
  }
}

nlohmann::json preprocessing_to_json(const PreprocessingParams& params) {
  nlohmann::json j;
  j["mode"] = to_string(params.mode);
  j["delta_offset_ms"] = params.delta_offset_ms;
  j["delta_step"] = params.delta_step_samples;
  j["horizon_ms"] = params.horizon_ms;
  j["zero_velocity_error"] = params.zero_velocity_error;
  return j;
}

PreprocessingParams preprocessing_from_json(const nlohmann::json& j) {
  try {
    PreprocessingParams params;
    if (j.contains("mode")) params.mode = window_mode_from_string(j.at("mode").get<std::string>());
    params.delta_offset_ms = j.value("delta_offset_ms", params.delta_offset_ms);
    params.delta_step_samples = j.value("delta_step", params.delta_step_samples);
    params.horizon_ms = j.value("horizon_ms", params.horizon_ms);
    params.zero_velocity_error = j.value("zero_velocity_error", params.zero_velocity_error);
    params.validate();
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad preprocessing json: ") + e.what());
  }
}

}  // namespace contactsense
