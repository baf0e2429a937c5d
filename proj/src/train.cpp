#include "mixclip/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mixclip {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) {
    throw std::invalid_argument("train.epochs must be at least 1");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("train.batch_size must be at least 1");
  }
  // 0 is allowed: it freezes the parameters, a useful control run.
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train.learning_rate must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("train.momentum must lie in [0, 1)");
  }
  if (eval_every < 1) {
    throw std::invalid_argument("train.eval_every must be at least 1");
  }
  if (model.embed_dim < 1) {
    throw std::invalid_argument("model.embed_dim must be at least 1");
  }
  if (fixed_eta && !(*fixed_eta >= 0.0 && *fixed_eta <= 1.0)) {
    throw std::invalid_argument("fixed eta must lie in [0, 1]");
  }
  model.prompt.validate();
  loss.validate();
}

namespace {

void require_same_label_space(const DomainDataset& a, const DomainDataset& b,
                              const ClassEmbeddings& classes) {
  if (a.class_names != b.class_names) {
    throw std::invalid_argument("source and target do not share a label space");
  }
  if (a.class_names != classes.names()) {
    throw std::invalid_argument("class table does not match the dataset's classes");
  }
}

void add_scaled(Vec64& dst, const Vec64& src, double scale) {
  for (std::size_t k = 0; k < dst.size(); ++k) {
    dst[k] += scale * src[k];
  }
}

}  // namespace

TrainResult train_run(const DomainDataset& source, const DomainDataset& target,
                      EncoderParams model, const ClassEmbeddings& classes,
                      const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (source.empty()) {
    throw std::invalid_argument("train_run: empty source dataset");
  }
  if (source.encoded) {
    throw std::invalid_argument(
        "train_run: encoded datasets carry no raw features to finetune on");
  }
  require_same_label_space(source, target, classes);
  if (source.dim() != model.input_dim()) {
    throw DimensionError("train_run: feature dimension does not match encoder input");
  }
  if (classes.dim() != model.embed_dim()) {
    throw DimensionError("train_run: class table dimension does not match encoder output");
  }

  SeededRng shuffle_rng(derive_seed(cfg.seed, 1));
  SeededRng mix_rng(derive_seed(cfg.seed, 2));
  Vec64 weights = flatten(model);
  Vec64 velocity(weights.size(), 0.0);

  TrainResult result;
  result.record.initial_accuracy = evaluate(model, classes, target);

  const std::size_t n = source.size();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffle_rng.permutation(n);
    double sum_actual = 0.0;
    double sum_mix = 0.0;
    double sum_total = 0.0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::size_t batch = stop - start;
      std::vector<Vec64> embeddings;
      std::vector<std::size_t> labels;
      embeddings.reserve(batch);
      labels.reserve(batch);
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = source.samples[order[i]];
        embeddings.push_back(encode(model, s.features));
        labels.push_back(s.label);
      }

      auto draws = build_mix(batch, mix_rng, cfg.loss.beta);
      if (cfg.fixed_eta) {
        for (auto& d : draws) {
          d.eta = *cfg.fixed_eta;
        }
      }
      const auto loss = total_loss(embeddings, labels, draws, classes, cfg.loss);
      for (std::size_t i = 0; i < batch; ++i) {
        sum_actual += loss.per_sample_actual[i];
        sum_mix += loss.per_sample_mix[i];
        sum_total += loss.per_sample_actual[i] + cfg.loss.lambda * loss.per_sample_mix[i];
      }

      Vec64 grad(weights.size(), 0.0);
      for (std::size_t i = 0; i < batch; ++i) {
        const auto& x = source.samples[order[start + i]].features;
        add_scaled(grad, flatten(encode_backward(model, x, loss.grad_image_embeddings[i])),
                   1.0);
      }
      for (std::size_t k = 0; k < weights.size(); ++k) {
        velocity[k] = cfg.momentum * velocity[k] + grad[k];
        weights[k] -= cfg.learning_rate * velocity[k];
      }
      assign_flat(model, weights);
    }

    if (!all_finite(weights)) {
      throw std::domain_error("train_run: parameters diverged at epoch " +
                              std::to_string(epoch));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    const auto count = static_cast<double>(n);
    rec.loss_actual = sum_actual / count;
    rec.loss_mix = sum_mix / count;
    rec.loss_total = sum_total / count;
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      rec.target_accuracy = evaluate(model, classes, target);
    }
    result.record.epochs.push_back(rec);
  }
  result.record.final_accuracy = *result.record.epochs.back().target_accuracy;
  result.params = std::move(model);
  return result;
}

double evaluate_encoded(const ClassEmbeddings& classes, const DomainDataset& target) {
  if (target.empty()) {
    throw std::invalid_argument("evaluate: empty target dataset");
  }
  std::size_t correct = 0;
  for (const auto& s : target.samples) {
    if (zero_shot_classify(s.features, classes) == s.label) {
      ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(target.size());
}

double evaluate(const EncoderParams& model, const ClassEmbeddings& classes,
                const DomainDataset& target) {
  if (target.empty()) {
    throw std::invalid_argument("evaluate: empty target dataset");
  }
  if (target.encoded) {
    return evaluate_encoded(classes, target);
  }
  std::size_t correct = 0;
  for (const auto& s : target.samples) {
    if (zero_shot_classify(encode(model, s.features), classes) == s.label) {
      ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(target.size());
}

std::vector<std::optional<double>> evaluate_per_domain(const EncoderParams& model,
                                                       const ClassEmbeddings& classes,
                                                       const DomainDataset& ds) {
  std::vector<std::optional<double>> out(ds.domain_names.size());
  for (std::size_t d = 0; d < ds.domain_names.size(); ++d) {
    DomainDataset part;
    part.class_names = ds.class_names;
    part.domain_names = ds.domain_names;
    part.encoded = ds.encoded;
    for (const auto& s : ds.samples) {
      if (s.domain == d) {
        part.samples.push_back(s);
      }
    }
    if (!part.empty()) {
      out[d] = evaluate(model, classes, part);
    }
  }
  return out;
}

ClassEmbeddings resolve_class_embeddings(const DomainDataset& ds, const ModelConfig& model) {
  if (ds.class_embeddings) {
    return ClassEmbeddings(*ds.class_embeddings, ds.class_names);
  }
  return make_class_embeddings(ds.class_names, model.embed_dim, model.seed, model.prompt);
}

ProtocolResult run_protocol(const DomainDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  if (ds.domain_names.size() < 2) {
    throw std::invalid_argument("run_protocol: needs at least 2 domains");
  }
  const ClassEmbeddings classes = resolve_class_embeddings(ds, cfg.model);
  const EncoderShape shape{ds.dim(), cfg.model.hidden_dim, classes.dim()};

  ProtocolResult result;
  result.domain_names = ds.domain_names;
  double sum = 0.0;
  double sum_baseline = 0.0;
  for (std::size_t d = 0; d < ds.domain_names.size(); ++d) {
    const auto split = leave_one_domain_out(ds, d);
    if (split.target.empty()) {
      throw std::invalid_argument("run_protocol: domain '" + ds.domain_names[d] +
                                  "' has no samples");
    }
    auto run = train_run(split.source, split.target, init_encoder(shape, cfg.model.seed),
                         classes, cfg);
    TaskResult task;
    task.target_domain = d;
    task.baseline_accuracy = run.record.initial_accuracy;
    task.accuracy = run.record.final_accuracy;
    task.record = std::move(run.record);
    task.params = std::move(run.params);
    sum += task.accuracy;
    sum_baseline += task.baseline_accuracy;
    result.tasks.push_back(std::move(task));
  }
  const auto count = static_cast<double>(result.tasks.size());
  result.average = sum / count;
  result.baseline_average = sum_baseline / count;
  return result;
}

std::string method_label(const TrainConfig& cfg) {
  return cfg.loss.lambda > 0.0 ? "mms+mixup" : "mms";
}

namespace {

struct ReportRow {
  std::string method;
  std::vector<double> values;  // per domain, then average
};

std::vector<ReportRow> report_rows(const ProtocolResult& result, const TrainConfig& cfg) {
  ReportRow baseline{"zero-shot", {}};
  ReportRow trained{method_label(cfg), {}};
  for (const auto& t : result.tasks) {
    baseline.values.push_back(t.baseline_accuracy);
    trained.values.push_back(t.accuracy);
  }
  baseline.values.push_back(result.baseline_average);
  trained.values.push_back(result.average);
  return {baseline, trained};
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace

std::string render_report_text(const ProtocolResult& result, const TrainConfig& cfg) {
  const auto rows = report_rows(result, cfg);
  std::vector<std::string> headers = result.domain_names;
  headers.push_back("Avg");

  std::size_t method_width = 6;
  for (const auto& r : rows) {
    method_width = std::max(method_width, r.method.size());
  }
  std::vector<std::size_t> widths;
  for (const auto& h : headers) {
    widths.push_back(std::max<std::size_t>(h.size(), 6));
  }

  std::ostringstream out;
  out << pad_right("Method", method_width);
  for (std::size_t i = 0; i < headers.size(); ++i) {
    out << "  " << pad_left(headers[i], widths[i]);
  }
  out << '\n';
  for (const auto& r : rows) {
    out << pad_right(r.method, method_width);
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      out << "  " << pad_left(format_fixed(r.values[i], 2), widths[i]);
    }
    out << '\n';
  }
  return out.str();
}

std::string render_report_csv(const ProtocolResult& result, const TrainConfig& cfg) {
  std::ostringstream out;
  out << "method";
  for (const auto& name : result.domain_names) {
    out << ',' << name;
  }
  out << ",Avg\n";
  for (const auto& r : report_rows(result, cfg)) {
    out << r.method;
    for (double v : r.values) {
      out << ',' << format_fixed(v, 6);
    }
    out << '\n';
  }
  return out.str();
}

std::string render_curve_csv(const RunRecord& record) {
  std::ostringstream out;
  out << "epoch,loss_actual,loss_mix,loss_total,target_accuracy\n";
  for (const auto& e : record.epochs) {
    out << e.epoch << ',' << format_fixed(e.loss_actual, 6) << ','
        << format_fixed(e.loss_mix, 6) << ',' << format_fixed(e.loss_total, 6) << ',';
    if (e.target_accuracy) {
      out << format_fixed(*e.target_accuracy, 6);
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string real_array(const Vec64& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) {
      out += ',';
    }
    out += format_shortest(v[i]);
  }
  return out + "]";
}

Vec64 reals_from(const json& j) {
  Vec64 v;
  for (const auto& x : j) {
    if (!x.is_number()) {
      throw ParseError("checkpoint: expected a number", 0);
    }
    v.push_back(x.get<double>());
  }
  return v;
}

}  // namespace

std::string serialize_checkpoint(const EncoderParams& params, const ClassEmbeddings& classes,
                                 const TrainConfig& cfg) {
  params.validate();
  std::ostringstream out;
  out << "{\n";
  out << "\"format\": \"mixclip-checkpoint\",\n";
  out << "\"version\": " << kCheckpointVersion << ",\n";
  out << "\"activation\": " << json(EncoderParams::kActivationId).dump() << ",\n";
  out << "\"dims\": {\"input\": " << params.input_dim() << ", \"hidden\": "
      << params.hidden_dim() << ", \"embed\": " << params.embed_dim() << "},\n";
  out << "\"model_seed\": " << cfg.model.seed << ",\n";
  out << "\"template\": " << json(cfg.model.prompt.text).dump() << ",\n";
  out << "\"class_names\": " << json(classes.names()).dump() << ",\n";
  out << "\"class_embeddings\": [\n";
  for (std::size_t c = 0; c < classes.size(); ++c) {
    out << "  " << real_array(classes[c]) << (c + 1 < classes.size() ? ",\n" : "\n");
  }
  out << "],\n";
  out << "\"train\": {\"epochs\": " << cfg.epochs << ", \"batch_size\": " << cfg.batch_size
      << ", \"learning_rate\": " << format_shortest(cfg.learning_rate)
      << ", \"momentum\": " << format_shortest(cfg.momentum) << ", \"seed\": " << cfg.seed
      << ", \"eval_every\": " << cfg.eval_every << "},\n";
  out << "\"loss\": {\"tau\": " << format_shortest(cfg.loss.tau)
      << ", \"margin\": " << format_shortest(cfg.loss.margin)
      << ", \"lambda\": " << format_shortest(cfg.loss.lambda)
      << ", \"beta_alpha\": " << format_shortest(cfg.loss.beta.alpha)
      << ", \"beta_beta\": " << format_shortest(cfg.loss.beta.beta)
      << ", \"mms_form\": \"" << to_string(cfg.loss.form) << "\"},\n";
  out << "\"layers\": [\n";
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    out << "  {\"in\": " << l.in << ", \"out\": " << l.out << ",\n";
    out << "   \"weights\": " << real_array(l.weights) << ",\n";
    out << "   \"bias\": " << real_array(l.bias) << "}"
        << (i + 1 < params.layers.size() ? ",\n" : "\n");
  }
  out << "]\n}\n";
  return out.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // Locate the failing line from the byte offset.
    const std::size_t offset = std::min<std::size_t>(e.byte, text.size());
    const auto line = static_cast<std::size_t>(
        std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n') + 1);
    throw ParseError(std::string("checkpoint: ") + e.what(), line);
  }
  try {
    if (doc.at("format").get<std::string>() != "mixclip-checkpoint") {
      throw ParseError("checkpoint: unrecognized format tag", 0);
    }
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw VersionError("checkpoint version " + std::to_string(version) +
                         " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    }
    if (doc.at("activation").get<std::string>() != EncoderParams::kActivationId) {
      throw ParseError("checkpoint: unsupported activation", 0);
    }

    TrainConfig cfg;
    cfg.model.seed = doc.at("model_seed").get<std::uint64_t>();
    cfg.model.prompt.text = doc.at("template").get<std::string>();
    const auto& dims = doc.at("dims");
    cfg.model.hidden_dim = dims.at("hidden").get<std::size_t>();
    cfg.model.embed_dim = dims.at("embed").get<std::size_t>();
    const auto& tr = doc.at("train");
    cfg.epochs = tr.at("epochs").get<std::size_t>();
    cfg.batch_size = tr.at("batch_size").get<std::size_t>();
    cfg.learning_rate = tr.at("learning_rate").get<double>();
    cfg.momentum = tr.at("momentum").get<double>();
    cfg.seed = tr.at("seed").get<std::uint64_t>();
    cfg.eval_every = tr.at("eval_every").get<std::size_t>();
    const auto& lo = doc.at("loss");
    cfg.loss.tau = lo.at("tau").get<double>();
    cfg.loss.margin = lo.at("margin").get<double>();
    cfg.loss.lambda = lo.at("lambda").get<double>();
    cfg.loss.beta = {lo.at("beta_alpha").get<double>(), lo.at("beta_beta").get<double>()};
    cfg.loss.form = parse_mms_form(lo.value("mms_form", std::string("actual")));

    EncoderParams params;
    for (const auto& l : doc.at("layers")) {
      params.layers.push_back({l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                               reals_from(l.at("weights")), reals_from(l.at("bias"))});
    }
    params.validate();
    if (params.input_dim() != dims.at("input").get<std::size_t>() ||
        params.hidden_dim() != cfg.model.hidden_dim ||
        params.embed_dim() != cfg.model.embed_dim) {
      throw DimensionError("checkpoint: layer shapes disagree with recorded dims");
    }

    std::vector<Vec64> rows;
    for (const auto& r : doc.at("class_embeddings")) {
      rows.push_back(reals_from(r));
    }
    ClassEmbeddings classes(std::move(rows),
                            doc.at("class_names").get<std::vector<std::string>>());
    if (classes.dim() != params.embed_dim()) {
      throw DimensionError("checkpoint: class table dimension differs from encoder output");
    }
    return {std::move(params), std::move(classes), std::move(cfg)};
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 0);
  }
}

void save_checkpoint(const EncoderParams& params, const ClassEmbeddings& classes,
                     const TrainConfig& cfg, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(params, classes, cfg));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace mixclip
