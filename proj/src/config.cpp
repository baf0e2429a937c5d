#include "mixclip/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace mixclip {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) {
    return "";
  }
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end || text.empty()) {
    throw std::invalid_argument("invalid value '" + text + "' for key " + key);
  }
  return value;
}

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  if (trim(text).empty()) {
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(trim(item));
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += (i > 0 ? "," : "") + items[i];
  }
  return out;
}

struct Entry {
  const char* name;
  const char* help;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Entry count_entry(const char* name, const char* help, T RunConfig::*group,
                  std::size_t T::*field) {
  return {name, help,
          [group, field](RunConfig& c, const std::string& key, const std::string& v) {
            c.*group.*field = parse_number<std::size_t>(key, v);
          },
          [group, field](const RunConfig& c) { return std::to_string(c.*group.*field); }};
}

template <typename T>
Entry seed_entry(const char* name, const char* help, T RunConfig::*group,
                 std::uint64_t T::*field) {
  return {name, help,
          [group, field](RunConfig& c, const std::string& key, const std::string& v) {
            c.*group.*field = parse_number<std::uint64_t>(key, v);
          },
          [group, field](const RunConfig& c) { return std::to_string(c.*group.*field); }};
}

template <typename Get>
Entry real_entry(const char* name, const char* help, Get access) {
  return {name, help,
          [access](RunConfig& c, const std::string& key, const std::string& v) {
            access(c) = parse_number<double>(key, v);
          },
          [access](const RunConfig& c) {
            return format_shortest(access(c));
          }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      count_entry("data.classes", "number of classes C", &RunConfig::data,
                  &SynthConfig::classes),
      count_entry("data.domains", "number of domains D", &RunConfig::data,
                  &SynthConfig::domains),
      count_entry("data.n_per_cell", "samples per (domain, class)", &RunConfig::data,
                  &SynthConfig::n_per_cell),
      count_entry("data.dim", "raw feature dimension", &RunConfig::data, &SynthConfig::dim),
      real_entry("data.noise_sigma", "within-cluster standard deviation",
                 [](auto& c) -> auto& { return c.data.noise_sigma; }),
      real_entry("data.shift_mag", "domain shift magnitude (rotation angle and translation)",
                 [](auto& c) -> auto& { return c.data.shift_mag; }),
      seed_entry("data.seed", "dataset seed", &RunConfig::data, &SynthConfig::seed),
      {"data.class_names", "comma-separated class names (empty: class_<i>)",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.data.class_names = parse_list(v);
       },
       [](const RunConfig& c) { return join(c.data.class_names); }},
      {"data.domain_names", "comma-separated domain names (empty: domain_<i>)",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.data.domain_names = parse_list(v);
       },
       [](const RunConfig& c) { return join(c.data.domain_names); }},
      {"model.hidden_dim", "encoder hidden width (0: single linear layer)",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.model.hidden_dim = parse_number<std::size_t>(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.model.hidden_dim); }},
      {"model.embed_dim", "embedding dimension of image and class embeddings",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.model.embed_dim = parse_number<std::size_t>(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.model.embed_dim); }},
      {"model.seed", "encoder initialisation and class-table seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.model.seed = parse_number<std::uint64_t>(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.model.seed); }},
      {"model.template", "prompt template containing [CLASS] once",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.train.model.prompt.text = v;
       },
       [](const RunConfig& c) { return c.train.model.prompt.text; }},
      real_entry("loss.tau", "temperature",
                 [](auto& c) -> auto& { return c.train.loss.tau; }),
      real_entry("loss.margin", "margin coefficient",
                 [](auto& c) -> auto& { return c.train.loss.margin; }),
      real_entry("loss.lambda", "weight of the mix-up loss",
                 [](auto& c) -> auto& { return c.train.loss.lambda; }),
      real_entry("loss.beta_alpha", "Beta shape alpha for the mixing coefficient",
                 [](auto& c) -> auto& { return c.train.loss.beta.alpha; }),
      real_entry("loss.beta_beta", "Beta shape beta for the mixing coefficient",
                 [](auto& c) -> auto& { return c.train.loss.beta.beta; }),
      {"loss.mms_form", "classification term of the objective: actual or paper",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.train.loss.form = parse_mms_form(v);
       },
       [](const RunConfig& c) { return to_string(c.train.loss.form); }},
      count_entry("train.epochs", "training epochs per task", &RunConfig::train,
                  &TrainConfig::epochs),
      count_entry("train.batch_size", "mini-batch size", &RunConfig::train,
                  &TrainConfig::batch_size),
      real_entry("train.learning_rate", "SGD learning rate",
                 [](auto& c) -> auto& { return c.train.learning_rate; }),
      real_entry("train.momentum", "classical momentum (0 disables)",
                 [](auto& c) -> auto& { return c.train.momentum; }),
      seed_entry("train.seed", "shuffle and mix-draw seed", &RunConfig::train,
                 &TrainConfig::seed),
      count_entry("train.eval_every", "epochs between target evaluations", &RunConfig::train,
                  &TrainConfig::eval_every),
      count_entry("compare.batches", "batches sampled by compare-losses", &RunConfig::compare,
                  &CompareConfig::batches),
      count_entry("compare.batch_size", "samples per compare-losses batch",
                  &RunConfig::compare, &CompareConfig::batch_size),
      seed_entry("compare.seed", "compare-losses sampling seed", &RunConfig::compare,
                 &CompareConfig::seed),
  };
  return table;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (key == e.name) {
      return e;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  find_entry(key).set(*this, key, value);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::render() const {
  std::string out;
  for (const auto& e : entries()) {
    out += std::string(e.name) + " = " + e.get(*this) + "\n";
  }
  return out;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    const RunConfig defaults;
    for (const auto& e : entries()) {
      out.push_back({e.name, e.get(defaults), e.help});
    }
    return out;
  }();
  return keys;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') {
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ParseError("expected 'key = value'", line_no);
    }
    const std::string key = trim(body.substr(0, eq));
    if (!seen.insert(key).second) {
      throw ParseError("duplicate key '" + key + "'", line_no);
    }
    try {
      base.set(key, trim(body.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open config file " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), std::move(base));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

}  // namespace mixclip
