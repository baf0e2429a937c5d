#include "mixclip/cli.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

namespace mixclip::cli {

namespace fs = std::filesystem;

namespace {

std::string safe_file_stem(const std::string& name) {
  std::string out;
  for (unsigned char c : name) {
    out += std::isalnum(c) || c == '-' || c == '_' ? static_cast<char>(c) : '_';
  }
  return out;
}

const fs::path& require_path(const std::optional<fs::path>& p, const char* flag) {
  if (!p) {
    throw std::invalid_argument(std::string("missing required option ") + flag);
  }
  return *p;
}

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  std::istringstream in(cfg.render());
  std::string line;
  while (std::getline(in, line)) {
    out += "# " + line + "\n";
  }
  return out;
}

// Removes every file it tracks unless committed.
class OutputTransaction {
 public:
  void write(const fs::path& path, const std::string& contents) {
    write_file_atomic(path, contents);
    written_.push_back(path);
  }
  void commit() { committed_ = true; }
  ~OutputTransaction() {
    if (committed_) {
      return;
    }
    for (const auto& p : written_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }

 private:
  std::vector<fs::path> written_;
  bool committed_ = false;
};

}  // namespace

RunConfig resolve_config(const CommandOptions& opts) {
  RunConfig cfg;
  if (opts.config) {
    cfg = load_config(*opts.config);
  }
  for (const auto& o : opts.overrides) {
    cfg.apply_override(o);
  }
  return cfg;
}

int cmd_gen_data(const CommandOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts);
  const fs::path& path = require_path(opts.out, "--out");
  const DomainDataset ds = generate(cfg.data);
  save_dataset(path, ds);

  out << "wrote " << path.string() << ": " << ds.size() << " samples, "
      << ds.class_names.size() << " classes, " << ds.domain_names.size()
      << " domains, dim " << ds.dim() << '\n';
  const auto counts = ds.cell_counts();
  for (std::size_t d = 0; d < counts.size(); ++d) {
    std::size_t total = 0;
    for (auto n : counts[d]) {
      total += n;
    }
    out << "  " << ds.domain_names[d] << ": " << total << " samples\n";
  }
  return 0;
}

int cmd_train(const CommandOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts);
  const fs::path& data_path = require_path(opts.data, "--data");
  const fs::path& out_dir = require_path(opts.out, "--out");
  const DomainDataset ds = load_dataset(data_path);

  const auto result = run_protocol(ds, cfg.train);
  const ClassEmbeddings classes = resolve_class_embeddings(ds, cfg.train.model);

  fs::create_directories(out_dir);
  OutputTransaction tx;
  tx.write(out_dir / "config.txt", cfg.render());
  for (const auto& task : result.tasks) {
    const std::string stem = std::to_string(task.target_domain) + "_" +
                             safe_file_stem(ds.domain_names[task.target_domain]);
    tx.write(out_dir / ("curve_" + stem + ".csv"), render_curve_csv(task.record));
    tx.write(out_dir / ("checkpoint_" + stem + ".json"),
             serialize_checkpoint(task.params, classes, cfg.train));
  }
  const std::string report = opts.format == Format::Csv
                                 ? render_report_csv(result, cfg.train)
                                 : render_report_text(result, cfg.train);
  tx.write(out_dir / (opts.format == Format::Csv ? "report.csv" : "report.txt"), report);
  tx.commit();

  out << echo_config(cfg) << report;
  return 0;
}

int cmd_eval(const CommandOptions& opts, std::ostream& out) {
  const fs::path& ckpt_path = require_path(opts.checkpoint, "--checkpoint");
  const fs::path& data_path = require_path(opts.data, "--data");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const DomainDataset ds = load_dataset(data_path);

  if (ds.class_names != ckpt.classes.names()) {
    throw std::invalid_argument("dataset classes do not match the checkpoint's classes");
  }
  std::optional<ClassEmbeddings> table;
  if (ds.encoded) {
    table = ds.class_embeddings ? ClassEmbeddings(*ds.class_embeddings, ds.class_names)
                                : ckpt.classes;
    if (ds.dim() != table->dim()) {
      throw DimensionError("encoded features have dimension " + std::to_string(ds.dim()) +
                           " but class embeddings have " + std::to_string(table->dim()));
    }
  } else {
    table = ckpt.classes;
    if (ds.dim() != ckpt.params.input_dim()) {
      throw DimensionError("dataset features have dimension " + std::to_string(ds.dim()) +
                           " but the encoder expects " +
                           std::to_string(ckpt.params.input_dim()));
    }
  }

  const auto acc = evaluate_per_domain(ckpt.params, *table, ds);
  std::ostringstream body;
  if (opts.format == Format::Csv) {
    body << "domain,accuracy\n";
  }
  for (std::size_t d = 0; d < acc.size(); ++d) {
    if (!acc[d]) {
      continue;
    }
    if (opts.format == Format::Csv) {
      body << ds.domain_names[d] << ',' << format_fixed(*acc[d], 6) << '\n';
    } else {
      body << ds.domain_names[d] << ": " << format_fixed(*acc[d], 6) << "%"
           << (ds.encoded ? " (encoder bypassed)" : "") << '\n';
    }
  }
  if (opts.out) {
    write_file_atomic(*opts.out, body.str());
  }
  out << body.str();
  return 0;
}

LossComparison compare_losses(const DomainDataset& ds, const ClassEmbeddings& classes,
                              const EncoderParams* encoder, const RunConfig& cfg) {
  cfg.train.loss.validate();
  if (ds.class_names.size() < 2) {
    throw std::invalid_argument("compare-losses needs at least 2 classes");
  }
  if (ds.empty()) {
    throw std::invalid_argument("compare-losses: empty dataset");
  }
  if (cfg.compare.batches < 1 || cfg.compare.batch_size < 1) {
    throw std::invalid_argument("compare.batches and compare.batch_size must be positive");
  }
  if (!ds.encoded && encoder == nullptr) {
    throw std::invalid_argument("compare-losses: raw features need an encoder");
  }

  auto embed = [&](const Vec64& features) {
    return ds.encoded ? l2_normalize(features) : encode(*encoder, features);
  };

  struct Acc {
    std::size_t n = 0;
    double paper = 0.0, actual = 0.0, abs_diff = 0.0, max_diff = 0.0;
    std::size_t n_cos = 0;
    double cos_sum = 0.0, cos_min = 1.0;

    void add(double lp, double la, std::optional<double> cos) {
      ++n;
      paper += lp;
      actual += la;
      const double d = std::abs(lp - la);
      abs_diff += d;
      max_diff = std::max(max_diff, d);
      if (cos) {
        ++n_cos;
        cos_sum += *cos;
        cos_min = std::min(cos_min, *cos);
      }
    }
    ComparisonRow row(std::string name) const {
      ComparisonRow r;
      r.batch = std::move(name);
      r.samples = n;
      const auto count = static_cast<double>(n);
      r.mean_paper = paper / count;
      r.mean_actual = actual / count;
      r.mean_abs_diff = abs_diff / count;
      r.max_abs_diff = max_diff;
      if (n_cos > 0) {
        r.grad_cos_mean = cos_sum / static_cast<double>(n_cos);
        r.grad_cos_min = cos_min;
      }
      return r;
    }
  };

  LossComparison cmp;
  Acc overall;
  for (std::size_t b = 0; b < cfg.compare.batches; ++b) {
    SeededRng rng(derive_seed(cfg.compare.seed, b));
    Acc acc;
    for (std::size_t i = 0; i < cfg.compare.batch_size; ++i) {
      const auto& s = ds.samples[rng.uniform_index(ds.size())];
      const Vec64 img = embed(s.features);
      const auto lp = mms_paper_loss(img, s.label, classes, cfg.train.loss);
      const auto la = mms_actual_loss(img, s.label, classes, cfg.train.loss);
      const auto& gp = lp.grad_image_embeddings[0];
      const auto& ga = la.grad_image_embeddings[0];
      const double denom = norm(gp) * norm(ga);
      std::optional<double> cos;
      if (denom > 0.0) {
        cos = std::clamp(dot(gp, ga) / denom, -1.0, 1.0);
      }
      acc.add(lp.value, la.value, cos);
      overall.add(lp.value, la.value, cos);
    }
    cmp.batches.push_back(acc.row(std::to_string(b)));
  }
  cmp.overall = overall.row("all");
  return cmp;
}

std::string render_comparison(const LossComparison& cmp, Format format) {
  auto opt = [](const std::optional<double>& v) {
    return v ? format_fixed(*v, 7) : std::string("n/a");
  };
  std::ostringstream out;
  const char* sep = format == Format::Csv ? "," : "  ";
  out << "batch" << sep << "samples" << sep << "mean_paper" << sep << "mean_actual" << sep
      << "mean_abs_diff" << sep << "max_abs_diff" << sep << "grad_cos_mean" << sep
      << "grad_cos_min\n";
  auto row = [&](const ComparisonRow& r) {
    out << r.batch << sep << r.samples << sep << format_fixed(r.mean_paper, 7) << sep
        << format_fixed(r.mean_actual, 7) << sep << format_fixed(r.mean_abs_diff, 7) << sep
        << format_fixed(r.max_abs_diff, 7) << sep << opt(r.grad_cos_mean) << sep
        << opt(r.grad_cos_min) << '\n';
  };
  for (const auto& r : cmp.batches) {
    row(r);
  }
  row(cmp.overall);
  if (format == Format::Text) {
    if (cmp.overall.max_abs_diff > 0.0) {
      out << "verdict: the documented and actual losses differ (max |L_paper - L_actual| = "
          << format_fixed(cmp.overall.max_abs_diff, 7) << ")\n";
    } else {
      out << "verdict: the documented and actual losses coincide on these inputs\n";
    }
  }
  return out.str();
}

int cmd_compare_losses(const CommandOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts);
  const DomainDataset ds = load_dataset(require_path(opts.data, "--data"));
  if (ds.class_names.size() < 2) {
    throw std::invalid_argument("compare-losses needs at least 2 classes");
  }

  std::optional<Checkpoint> ckpt;
  if (opts.checkpoint) {
    ckpt = load_checkpoint(*opts.checkpoint);
  }
  const ClassEmbeddings classes = ckpt && !ds.class_embeddings
                                      ? ckpt->classes
                                      : resolve_class_embeddings(ds, cfg.train.model);
  std::optional<EncoderParams> encoder;
  if (!ds.encoded) {
    encoder = ckpt ? ckpt->params
                   : init_encoder({ds.dim(), cfg.train.model.hidden_dim, classes.dim()},
                                  cfg.train.model.seed);
  } else if (ds.dim() != classes.dim()) {
    throw DimensionError("encoded features and class embeddings differ in dimension");
  }

  const auto cmp = compare_losses(ds, classes, encoder ? &*encoder : nullptr, cfg);
  const std::string body = render_comparison(cmp, opts.format);
  if (opts.out) {
    write_file_atomic(*opts.out, body);
  }
  out << body;
  return 0;
}

namespace {

std::string keys_footer() {
  std::ostringstream out;
  out << "\nConfig keys (set in --config files as `key = value`, or with --set key=value):\n";
  for (const auto& k : config_keys()) {
    out << "  " << k.name << " = " << (k.default_value.empty() ? "\"\"" : k.default_value)
        << "\n      " << k.help << "\n";
  }
  return out.str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Margin softmax + mix-up finetuning on synthetic multi-domain data"};
  app.name("mixclip");
  app.footer(keys_footer());
  app.require_subcommand(1);

  CommandOptions opts;
  std::string format = "text";
  std::string config_path, out_path, data_path, ckpt_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file (key = value lines)");
    sub->add_option("--set", opts.overrides, "override a config key, key=value (repeatable)");
    sub->add_option("--format", format, "output format")
        ->check(CLI::IsMember({"text", "csv"}));
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-domain dataset");
  add_common(gen);
  gen->add_option("--out", out_path, "dataset file to write")->required();

  auto* train = app.add_subcommand("train", "leave-one-domain-out training and report");
  add_common(train);
  train->add_option("--data", data_path, "dataset file")->required();
  train->add_option("--out", out_path, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "per-domain accuracy of a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset file")->required();
  eval->add_option("--out", out_path, "also write the results to this file");

  auto* cmp = app.add_subcommand("compare-losses",
                                 "compare the documented and actual margin losses");
  add_common(cmp);
  cmp->add_option("--data", data_path, "dataset file")->required();
  cmp->add_option("--checkpoint", ckpt_path, "use this trained encoder and class table");
  cmp->add_option("--out", out_path, "also write the table to this file");

  for (auto* sub : {gen, train, eval, cmp}) {
    sub->footer(keys_footer());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  auto to_path = [](const std::string& s) {
    return s.empty() ? std::optional<fs::path>{} : std::optional<fs::path>{s};
  };
  opts.config = to_path(config_path);
  opts.out = to_path(out_path);
  opts.data = to_path(data_path);
  opts.checkpoint = to_path(ckpt_path);
  opts.format = format == "csv" ? Format::Csv : Format::Text;

  try {
    if (gen->parsed()) {
      return cmd_gen_data(opts, out);
    }
    if (train->parsed()) {
      return cmd_train(opts, out);
    }
    if (eval->parsed()) {
      return cmd_eval(opts, out);
    }
    return cmd_compare_losses(opts, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mixclip::cli
