#include "wdae/wdae_model.hpp"

#include <cmath>
#include <cstdio>

#include "wdae/errors.hpp"

namespace wdae {

std::string_view to_string(Variant variant) { return variant == Variant::gnn ? "gnn" : "mlp"; }

Variant parse_variant(std::string_view text) {
  if (text == "gnn") return Variant::gnn;
  if (text == "mlp") return Variant::mlp;
  throw ConfigError("unknown model variant \"" + std::string(text) + "\" (expected gnn or mlp)");
}

void ModelConfig::validate() const {
  if (dim == 0) throw ConfigError("model dimension must be positive");
  if (hidden_width == 0) throw ConfigError("hidden width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky slope must lie in [0, 1)");
  if (neighbors == 0) throw ConfigError("neighbour count must be positive");
  if (!(inverse_temperature > 0.0)) throw ConfigError("inverse temperature must be positive");
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  weight = Tensor::from({in, out}, std::move(w), true);
  bias = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const { return add_rowwise(matmul(x, weight), bias); }

namespace {

void require_width(const Tensor& h, std::size_t width, const char* op) {
  if (h.rank() != 2 || h.dim(1) != width) {
    throw ShapeError(std::string(op) + ": expected rows of width " + std::to_string(width) + ", got " +
                     to_string(h.shape()));
  }
}

Tensor unit_chain(const Tensor& x, const std::optional<BatchNorm>& norm, const ForwardContext& ctx,
                  DropoutScope scope) {
  Tensor y = norm ? batch_norm(x, *norm, ctx.mode) : x;
  y = dropout(y, ctx.dropout, ctx.mode, ctx.rng, scope);
  return leaky_relu(y, ctx.leaky_slope);
}

}  // namespace

Tensor relation_messages(const GnnLayerParams& layer, const Tensor& h, std::span<const std::size_t> receivers,
                         std::span<const std::size_t> senders, const ForwardContext& ctx) {
  if (!layer.message.defined()) throw ConfigError("relation_messages: layer has no message function");
  require_width(h, layer.input_width, "relation_messages");
  if (receivers.size() != senders.size() || receivers.empty()) {
    throw ShapeError("relation_messages: receiver and sender lists must be non-empty and equally long");
  }
  // W h_i + W h_j with one projection per node; addition is commutative in
  // floating point, so swapping the endpoints is bitwise neutral.
  Tensor projected = matmul(h, layer.message.weight);
  Tensor pre = add_rowwise(add(gather_rows(projected, receivers), gather_rows(projected, senders)), layer.message.bias);
  return unit_chain(pre, layer.message_norm, ctx, DropoutScope::per_column);
}

Tensor aggregate(const GnnLayerParams& layer, const Tensor& h, const ClassGraph& graph, const ForwardContext& ctx) {
  if (h.rank() != 2 || h.dim(0) != graph.num_nodes) {
    throw GraphError("aggregate: " + std::to_string(graph.num_nodes) + "-node graph for features " +
                     to_string(h.shape()));
  }
  std::vector<std::size_t> receivers, senders;
  for (std::size_t i = 0; i < graph.num_nodes; ++i) {
    for (std::size_t j : graph.neighbors[i]) {
      receivers.push_back(i);
      senders.push_back(j);
    }
  }
  Tensor messages = relation_messages(layer, h, receivers, senders, ctx);
  return mix_rows(messages, graph.edge_mixing());
}

Tensor update_hidden(const GnnLayerParams& layer, const Tensor& h, const Tensor& h_agg, const ForwardContext& ctx) {
  Tensor input = h_agg.defined() ? concat_cols(h, h_agg) : h;
  require_width(input, layer.update.in(), "update_hidden");
  Tensor u = l2_normalize(unit_chain(layer.update(input), layer.update_norm, ctx, DropoutScope::per_element), 1);
  return concat_cols(h, u);
}

FinalPrediction predict_final(const GnnLayerParams& layer, const Tensor& h, const Tensor& h_agg) {
  Tensor input = h_agg.defined() ? concat_cols(h, h_agg) : h;
  require_width(input, layer.update.in(), "predict_final");
  Tensor out = layer.update(input);
  const std::size_t d = layer.update.out() / 2;
  return {l2_normalize(slice_cols(out, 0, d), 1), sigmoid(slice_cols(out, d, 2 * d))};
}

WdaeModel::WdaeModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.dim, c = config_.hidden_width;
  hidden_.input_width = d;
  final_.input_width = d + c;
  if (config_.variant == Variant::gnn) {
    hidden_.message = Linear(d, c, rng);
    hidden_.message_norm.emplace(c);
    hidden_.update = Linear(d + c, c, rng);
    hidden_.update_norm.emplace(c);
    final_.message = Linear(d + c, c, rng);
    final_.message_norm.emplace(c);
    final_.update = Linear(d + c + c, 2 * d, rng);
  } else {
    hidden_.update = Linear(d, c, rng);
    hidden_.update_norm.emplace(c);
    final_.update = Linear(d + c, 2 * d, rng);
  }
}

namespace {

void collect(const GnnLayerParams& layer, std::vector<Tensor>& out) {
  if (layer.message.defined()) {
    out.push_back(layer.message.weight);
    out.push_back(layer.message.bias);
  }
  if (layer.message_norm) {
    out.push_back(layer.message_norm->gamma);
    out.push_back(layer.message_norm->beta);
  }
  out.push_back(layer.update.weight);
  out.push_back(layer.update.bias);
  if (layer.update_norm) {
    out.push_back(layer.update_norm->gamma);
    out.push_back(layer.update_norm->beta);
  }
}

void collect_stats(const GnnLayerParams& layer, std::vector<std::shared_ptr<BatchNormStats>>& out) {
  if (layer.message_norm) out.push_back(layer.message_norm->running);
  if (layer.update_norm) out.push_back(layer.update_norm->running);
}

Tensor deep_copy(const Tensor& t) {
  return Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), t.requires_grad());
}

std::optional<BatchNorm> copy_norm(const std::optional<BatchNorm>& bn) {
  if (!bn) return std::nullopt;
  BatchNorm out = *bn;
  out.gamma = deep_copy(bn->gamma);
  out.beta = deep_copy(bn->beta);
  out.running = std::make_shared<BatchNormStats>(*bn->running);
  return out;
}

GnnLayerParams copy_layer(const GnnLayerParams& layer) {
  GnnLayerParams out;
  out.input_width = layer.input_width;
  if (layer.message.defined()) {
    out.message.weight = deep_copy(layer.message.weight);
    out.message.bias = deep_copy(layer.message.bias);
  }
  out.message_norm = copy_norm(layer.message_norm);
  out.update.weight = deep_copy(layer.update.weight);
  out.update.bias = deep_copy(layer.update.bias);
  out.update_norm = copy_norm(layer.update_norm);
  return out;
}

}  // namespace

std::vector<Tensor> WdaeModel::parameters() const {
  std::vector<Tensor> out;
  collect(hidden_, out);
  collect(final_, out);
  return out;
}

std::vector<std::shared_ptr<BatchNormStats>> WdaeModel::running_stats() const {
  std::vector<std::shared_ptr<BatchNormStats>> out;
  collect_stats(hidden_, out);
  collect_stats(final_, out);
  return out;
}

std::size_t WdaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters()) n += p.size();
  return n;
}

WdaeModel WdaeModel::clone() const {
  WdaeModel out = *this;
  out.hidden_ = copy_layer(hidden_);
  out.final_ = copy_layer(final_);
  return out;
}

Reconstruction WdaeModel::reconstruct(const Tensor& w, const ClassGraph* graph, Mode mode, Rng* rng) const {
  require_width(w, config_.dim, "reconstruct");
  const ForwardContext ctx{mode, rng, config_.dropout, config_.leaky_slope};
  FinalPrediction pred;
  if (config_.variant == Variant::gnn) {
    if (graph == nullptr) throw GraphError("reconstruct: the GNN variant needs a class graph");
    if (graph->num_nodes != w.dim(0)) {
      throw GraphError("reconstruct: " + std::to_string(graph->num_nodes) + "-node graph for " +
                       std::to_string(w.dim(0)) + " weight rows");
    }
    Tensor h1 = update_hidden(hidden_, w, aggregate(hidden_, w, *graph, ctx), ctx);
    pred = predict_final(final_, h1, aggregate(final_, h1, *graph, ctx));
  } else {
    Tensor h1 = update_hidden(hidden_, w, Tensor(), ctx);
    pred = predict_final(final_, h1, Tensor());
  }
  return {add(w, mul(pred.gate, pred.delta)), pred.delta, pred.gate};
}

Tensor refine(const Tensor& w, const ClassGraph* graph, const WdaeModel& model, double step_size) {
  Tensor input = w.detach();
  Tensor r = model.reconstruct(input, graph, Mode::eval, nullptr).weights.detach();
  return l2_normalize(add(input, scale(sub(r, input), step_size)), 1).detach();
}

// ---- checkpoint ------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void append_tensor(std::string& out, const Shape& shape, std::span<const double> values) {
  append_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) append_u32(out, static_cast<std::uint32_t>(d));
  for (double v : values) append_f32(out, v);
}

std::vector<double> read_tensor(ByteReader& in, const Shape& expected) {
  const std::uint32_t rank = in.u32();
  Shape shape(rank);
  for (auto& d : shape) d = in.u32();
  if (shape != expected) {
    throw LoadError(LoadErrorKind::dimension_mismatch, in.source() + ": tensor of shape " + to_string(shape) +
                                                           " where " + to_string(expected) + " was expected");
  }
  const std::size_t n = shape_size(shape);
  in.require(n * 4, "tensor payload");
  std::vector<double> values(n);
  for (double& v : values) {
    v = in.f32();
    if (!std::isfinite(v)) throw LoadError(LoadErrorKind::non_finite, in.source() + ": non-finite parameter value");
  }
  return values;
}

}  // namespace

void save_model(const WdaeModel& model, const std::filesystem::path& dir, Meta extra) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::string bytes;
  for (const Tensor& p : model.parameters()) append_tensor(bytes, p.shape(), p.data());
  for (const auto& stats : model.running_stats()) {
    append_tensor(bytes, {stats->mean.size()}, stats->mean);
    append_tensor(bytes, {stats->var.size()}, stats->var);
  }
  write_bytes(dir / "model.bin", bytes);

  const ModelConfig& c = model.config();
  extra["variant"] = std::string(to_string(c.variant));
  extra["dim"] = std::to_string(c.dim);
  extra["hidden_width"] = std::to_string(c.hidden_width);
  extra["dropout"] = format_double(c.dropout);
  extra["leaky_slope"] = format_double(c.leaky_slope);
  extra["neighbors"] = std::to_string(c.neighbors);
  extra["inverse_temperature"] = format_double(c.inverse_temperature);
  write_meta(dir / "meta.txt", extra);
}

WdaeModel load_model(const std::filesystem::path& dir, Meta* meta_out) {
  const auto meta_path = dir / "meta.txt";
  const Meta meta = read_meta(meta_path);
  ModelConfig c;
  try {
    c.variant = parse_variant(meta_value(meta, "variant", meta_path));
    c.dim = std::stoul(meta_value(meta, "dim", meta_path));
    c.hidden_width = std::stoul(meta_value(meta, "hidden_width", meta_path));
    c.dropout = std::stod(meta_value(meta, "dropout", meta_path));
    c.leaky_slope = std::stod(meta_value(meta, "leaky_slope", meta_path));
    c.neighbors = std::stoul(meta_value(meta, "neighbors", meta_path));
    c.inverse_temperature = std::stod(meta_value(meta, "inverse_temperature", meta_path));
    c.validate();
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {  // stoul/stod failures and invalid values alike
    throw LoadError(LoadErrorKind::bad_metadata, meta_path.string() + ": " + e.what());
  }
  WdaeModel model(c, 0);
  ByteReader in = open_bytes(dir / "model.bin");
  for (Tensor& p : model.parameters()) {
    auto values = read_tensor(in, p.shape());
    std::copy(values.begin(), values.end(), p.mutable_data().begin());
  }
  for (const auto& stats : model.running_stats()) {
    stats->mean = read_tensor(in, {stats->mean.size()});
    stats->var = read_tensor(in, {stats->var.size()});
  }
  if (in.remaining() != 0) {
    throw LoadError(LoadErrorKind::dimension_mismatch, in.source() + ": " + std::to_string(in.remaining()) +
                                                           " unexpected trailing bytes");
  }
  if (meta_out) *meta_out = meta;
  return model;
}

}  // namespace wdae
