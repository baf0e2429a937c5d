#include "mixclip/data.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mixclip {

using nlohmann::json;

namespace {

Vec64 random_unit(SeededRng& rng, std::size_t dim) {
  Vec64 v(dim);
  for (double& x : v) {
    x = rng.normal();
  }
  return l2_normalize(v);
}

// Rotation by `angle` in the plane spanned by orthonormal a, b.
Vec64 rotate_in_plane(const Vec64& p, const Vec64& a, const Vec64& b, double angle) {
  const double pa = dot(p, a);
  const double pb = dot(p, b);
  const double c = std::cos(angle) - 1.0;
  const double s = std::sin(angle);
  Vec64 out(p);
  for (std::size_t k = 0; k < p.size(); ++k) {
    out[k] += c * (a[k] * pa + b[k] * pb) + s * (b[k] * pa - a[k] * pb);
  }
  return out;
}

std::vector<std::string> default_names(const std::string& prefix, std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    names.push_back(prefix + "_" + std::to_string(i));
  }
  return names;
}

void check_names(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) {
      throw std::invalid_argument(std::string(what) + " names must be non-empty");
    }
    if (!seen.insert(n).second) {
      throw std::invalid_argument(std::string("duplicate ") + what + " name: " + n);
    }
  }
}

std::string json_string(const std::string& s) { return json(s).dump(); }

void write_array(std::ostream& out, const Vec64& v) {
  out << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) {
      out << ',';
    }
    out << format_shortest(v[i]);
  }
  out << ']';
}

void write_names(std::ostream& out, const std::vector<std::string>& names) {
  out << '[';
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) {
      out << ',';
    }
    out << json_string(names[i]);
  }
  out << ']';
}

Vec64 parse_reals(const json& j, std::size_t line, const char* what) {
  if (!j.is_array()) {
    throw ParseError(std::string(what) + " must be an array of numbers", line);
  }
  Vec64 v;
  v.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) {
      throw ParseError(std::string(what) + " must contain only numbers", line);
    }
    v.push_back(x.get<double>());
  }
  if (!all_finite(v)) {
    throw ParseError(std::string(what) + " contains non-finite values", line);
  }
  return v;
}

std::vector<std::string> parse_names(const json& j, std::size_t line, const char* what) {
  if (!j.is_array()) {
    throw ParseError(std::string(what) + " must be an array of strings", line);
  }
  std::vector<std::string> names;
  for (const auto& x : j) {
    if (!x.is_string()) {
      throw ParseError(std::string(what) + " must contain only strings", line);
    }
    names.push_back(x.get<std::string>());
  }
  try {
    check_names(names, what);
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), line);
  }
  return names;
}

std::size_t index_of(std::vector<std::string>& names, const std::string& name,
                     bool fixed, std::size_t line, const char* what) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) {
      return i;
    }
  }
  if (fixed) {
    throw ParseError(std::string("unknown ") + what + " name '" + name + "'", line);
  }
  if (name.empty()) {
    throw ParseError(std::string(what) + " name must be non-empty", line);
  }
  names.push_back(name);
  return names.size() - 1;
}

}  // namespace

std::vector<std::vector<std::size_t>> DomainDataset::cell_counts() const {
  std::vector<std::vector<std::size_t>> counts(
      domain_names.size(), std::vector<std::size_t>(class_names.size(), 0));
  for (const auto& s : samples) {
    ++counts.at(s.domain).at(s.label);
  }
  return counts;
}

void DomainDataset::validate() const {
  check_names(class_names, "class");
  check_names(domain_names, "domain");
  const std::size_t d = dim();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.label >= class_names.size() || s.domain >= domain_names.size()) {
      throw std::out_of_range("sample " + std::to_string(i) +
                              " has label or domain out of range");
    }
    if (s.features.size() != d || d == 0) {
      throw DimensionError("sample " + std::to_string(i) + " has inconsistent dimension");
    }
    if (!all_finite(s.features)) {
      throw std::invalid_argument("sample " + std::to_string(i) + " has non-finite features");
    }
  }
  if (class_embeddings) {
    if (class_embeddings->size() != class_names.size()) {
      throw DimensionError("class embedding table does not match class count");
    }
  }
}

void SynthConfig::validate() const {
  if (classes < 2) {
    throw std::invalid_argument("data.classes must be at least 2");
  }
  if (domains < 2) {
    throw std::invalid_argument("data.domains must be at least 2");
  }
  if (n_per_cell < 1 || dim < 1) {
    throw std::invalid_argument("data.n_per_cell and data.dim must be at least 1");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw std::invalid_argument("data.noise_sigma must be non-negative");
  }
  if (!(shift_mag >= 0.0) || !std::isfinite(shift_mag)) {
    throw std::invalid_argument("data.shift_mag must be non-negative");
  }
  if (!class_names.empty() && class_names.size() != classes) {
    throw std::invalid_argument("data.class_names must list data.classes names");
  }
  if (!domain_names.empty() && domain_names.size() != domains) {
    throw std::invalid_argument("data.domain_names must list data.domains names");
  }
  check_names(class_names, "class");
  check_names(domain_names, "domain");
}

DomainDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  DomainDataset ds;
  ds.class_names = cfg.class_names.empty() ? default_names("class", cfg.classes)
                                           : cfg.class_names;
  ds.domain_names = cfg.domain_names.empty() ? default_names("domain", cfg.domains)
                                             : cfg.domain_names;

  SeededRng proto_rng(derive_seed(cfg.seed, 0));
  std::vector<Vec64> prototypes;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    prototypes.push_back(random_unit(proto_rng, cfg.dim));
  }

  const std::uint64_t domain_root = derive_seed(cfg.seed, 1);
  const std::uint64_t cell_root = derive_seed(cfg.seed, 2);
  ds.samples.reserve(cfg.domains * cfg.classes * cfg.n_per_cell);
  for (std::size_t d = 0; d < cfg.domains; ++d) {
    SeededRng rng(derive_seed(domain_root, d));
    const Vec64 a = random_unit(rng, cfg.dim);
    Vec64 b = random_unit(rng, cfg.dim);
    const double ab = dot(a, b);
    for (std::size_t k = 0; k < b.size(); ++k) {
      b[k] -= ab * a[k];
    }
    const bool can_rotate = cfg.dim >= 2 && norm(b) > 1e-12;
    if (can_rotate) {
      b = l2_normalize(b);
    }
    const double angle = cfg.shift_mag * (0.5 + 0.5 * rng.uniform_open());
    const Vec64 direction = random_unit(rng, cfg.dim);

    for (std::size_t c = 0; c < cfg.classes; ++c) {
      Vec64 center = can_rotate ? rotate_in_plane(prototypes[c], a, b, angle)
                                : prototypes[c];
      for (std::size_t k = 0; k < center.size(); ++k) {
        center[k] += cfg.shift_mag * direction[k];
      }
      SeededRng cell_rng(derive_seed(cell_root, d * cfg.classes + c));
      for (std::size_t n = 0; n < cfg.n_per_cell; ++n) {
        LabeledSample s{center, c, d};
        for (double& x : s.features) {
          x += cfg.noise_sigma * cell_rng.normal();
        }
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

DomainSplit leave_one_domain_out(const DomainDataset& ds, std::size_t target_domain) {
  if (ds.domain_names.size() < 2) {
    throw std::invalid_argument("leave-one-domain-out needs at least 2 domains");
  }
  if (target_domain >= ds.domain_names.size()) {
    throw std::out_of_range("target domain index " + std::to_string(target_domain) +
                            " out of range");
  }
  DomainSplit split;
  for (DomainDataset* part : {&split.source, &split.target}) {
    part->class_names = ds.class_names;
    part->domain_names = ds.domain_names;
    part->encoded = ds.encoded;
    part->class_embeddings = ds.class_embeddings;
  }
  for (const auto& s : ds.samples) {
    (s.domain == target_domain ? split.target : split.source).samples.push_back(s);
  }
  return split;
}

DomainDataset read_dataset(std::istream& in) {
  DomainDataset ds;
  bool have_metadata = false;
  std::optional<std::size_t> dim;
  std::size_t line_no = 0;
  std::string line;
  bool first_record = true;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_no);
    }
    if (!rec.is_object()) {
      throw ParseError("record must be a JSON object", line_no);
    }

    const bool is_meta = !rec.contains("features") && rec.contains("class_names");
    if (is_meta) {
      if (!first_record) {
        throw ParseError("metadata record must come first", line_no);
      }
      first_record = false;
      have_metadata = true;
      ds.class_names = parse_names(rec.at("class_names"), line_no, "class");
      if (rec.contains("domain_names")) {
        ds.domain_names = parse_names(rec.at("domain_names"), line_no, "domain");
      }
      if (rec.contains("encoded")) {
        if (!rec.at("encoded").is_boolean()) {
          throw ParseError("'encoded' must be a boolean", line_no);
        }
        ds.encoded = rec.at("encoded").get<bool>();
      }
      if (rec.contains("dim")) {
        if (!rec.at("dim").is_number_unsigned() || rec.at("dim").get<std::size_t>() == 0) {
          throw ParseError("'dim' must be a positive integer", line_no);
        }
        dim = rec.at("dim").get<std::size_t>();
      }
      if (rec.contains("class_embeddings")) {
        const auto& table = rec.at("class_embeddings");
        if (!table.is_array() || table.size() != ds.class_names.size()) {
          throw ParseError("'class_embeddings' needs one row per class", line_no);
        }
        std::vector<Vec64> rows;
        for (const auto& row : table) {
          rows.push_back(parse_reals(row, line_no, "class_embeddings"));
          if (rows.back().size() != rows.front().size() || rows.back().empty()) {
            throw ParseError("class_embeddings rows differ in dimension", line_no);
          }
        }
        ds.class_embeddings = std::move(rows);
      }
      continue;
    }
    first_record = false;

    for (const char* key : {"domain", "label", "features"}) {
      if (!rec.contains(key)) {
        throw ParseError(std::string("missing field '") + key + "'", line_no);
      }
    }
    if (!rec.at("domain").is_string() || !rec.at("label").is_string()) {
      throw ParseError("'domain' and 'label' must be strings", line_no);
    }
    LabeledSample s;
    s.features = parse_reals(rec.at("features"), line_no, "features");
    if (s.features.empty()) {
      throw ParseError("empty feature vector", line_no);
    }
    if (!dim) {
      dim = s.features.size();
    } else if (s.features.size() != *dim) {
      throw ParseError("dimension " + std::to_string(s.features.size()) +
                           " does not match expected " + std::to_string(*dim),
                       line_no);
    }
    const bool fixed_domains = have_metadata && !ds.domain_names.empty();
    s.label = index_of(ds.class_names, rec.at("label").get<std::string>(), have_metadata,
                       line_no, "class");
    s.domain = index_of(ds.domain_names, rec.at("domain").get<std::string>(),
                        fixed_domains, line_no, "domain");
    ds.samples.push_back(std::move(s));
  }

  if (ds.samples.empty()) {
    throw ParseError("dataset contains no samples", 0);
  }
  if (ds.encoded && ds.class_embeddings && ds.class_embeddings->front().size() != *dim) {
    throw ParseError("class_embeddings dimension does not match encoded features", 0);
  }
  return ds;
}

DomainDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open dataset file " + path.string());
  }
  try {
    return read_dataset(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

void write_dataset(std::ostream& out, const DomainDataset& ds) {
  ds.validate();
  out << "{\"class_names\":";
  write_names(out, ds.class_names);
  out << ",\"domain_names\":";
  write_names(out, ds.domain_names);
  out << ",\"encoded\":" << (ds.encoded ? "true" : "false");
  out << ",\"dim\":" << ds.dim();
  if (ds.class_embeddings) {
    out << ",\"class_embeddings\":[";
    for (std::size_t c = 0; c < ds.class_embeddings->size(); ++c) {
      if (c > 0) {
        out << ',';
      }
      write_array(out, (*ds.class_embeddings)[c]);
    }
    out << ']';
  }
  out << "}\n";
  for (const auto& s : ds.samples) {
    out << "{\"domain\":" << json_string(ds.domain_names[s.domain])
        << ",\"label\":" << json_string(ds.class_names[s.label]) << ",\"features\":";
    write_array(out, s.features);
    out << "}\n";
  }
}

void save_dataset(const std::filesystem::path& path, const DomainDataset& ds) {
  std::ostringstream out;
  write_dataset(out, ds);
  write_file_atomic(path, out.str());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    }
    out << contents;
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mixclip
