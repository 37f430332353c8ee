#include "cirl/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cirl/errors.hpp"

namespace cirl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* what) {
  throw Error(ErrorKind::ParseError, "config key '" + std::string(key) + "': '" +
                                         std::string(value) + "' is not " + what);
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto end = comma == std::string_view::npos ? v.size() : comma;
    std::string item = trim(v.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::size_t> parse_size_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(v)) {
    const std::size_t k = parse_size(key, item);
    if (k == 0) bad_value(key, v, "a list of positive integers");
    out.push_back(k);
  }
  if (out.empty()) bad_value(key, v, "a non-empty list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream s;
  for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
  return s.str();
}

std::string fmt(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

constexpr std::pair<const char*, EditKind> kEditNames[] = {
    {"add", EditKind::Add},
    {"remove", EditKind::Remove},
    {"replace", EditKind::Replace},
    {"modify", EditKind::Modify},
    {"background", EditKind::ChangeBackground},
};

unsigned parse_edit_kinds(std::string_view key, std::string_view v) {
  if (trim(v) == "all") return kAllEditKinds;
  unsigned mask = 0;
  for (const std::string& item : split_list(v)) {
    bool found = false;
    for (const auto& [name, kind] : kEditNames) {
      if (item == name) {
        mask |= edit_kind_bit(kind);
        found = true;
      }
    }
    if (!found) bad_value(key, item, "an edit kind (add, remove, replace, modify, background)");
  }
  return mask;
}

std::string edit_kinds_text(unsigned mask) {
  std::vector<std::string> names;
  for (const auto& [name, kind] : kEditNames) {
    if (mask & edit_kind_bit(kind)) names.emplace_back(name);
  }
  return join(names);
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
  bool model_key = false;
};

template <typename Get>
Field size_field(Get get, bool model_key = false) {
  return {[get](RunConfig& c, std::string_view k, std::string_view v) { get(c) = parse_size(k, v); },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); },
          model_key};
}

template <typename Get>
Field double_field(Get get, bool model_key = false) {
  return {[get](RunConfig& c, std::string_view k, std::string_view v) { get(c) = parse_double(k, v); },
          [get](const RunConfig& c) { return fmt(get(const_cast<RunConfig&>(c))); }, model_key};
}

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = [] {
    std::map<std::string, Field, std::less<>> t;
    t["corpus.train_triplets"] = size_field([](RunConfig& c) -> auto& { return c.corpus.train_triplets; });
    t["corpus.val_triplets"] = size_field([](RunConfig& c) -> auto& { return c.corpus.val_triplets; });
    t["corpus.test_triplets"] = size_field([](RunConfig& c) -> auto& { return c.corpus.test_triplets; });
    t["corpus.min_edits"] = size_field([](RunConfig& c) -> auto& { return c.corpus.min_edits; });
    t["corpus.max_edits"] = size_field([](RunConfig& c) -> auto& { return c.corpus.max_edits; });
    t["corpus.edit_kinds"] = {
        [](RunConfig& c, std::string_view k, std::string_view v) { c.corpus.edit_kinds = parse_edit_kinds(k, v); },
        [](const RunConfig& c) { return edit_kinds_text(c.corpus.edit_kinds); }};
    t["render.sigma"] = double_field([](RunConfig& c) -> auto& { return c.sigma; }, true);

    t["model.d_raw"] = size_field([](RunConfig& c) -> auto& { return c.model.frontend.d_raw; }, true);
    t["model.d_i"] = size_field([](RunConfig& c) -> auto& { return c.model.frontend.d_i; }, true);
    t["model.d_t"] = size_field([](RunConfig& c) -> auto& { return c.model.frontend.d_t; }, true);
    t["model.d_h"] = size_field([](RunConfig& c) -> auto& { return c.model.frontend.d_h; }, true);
    t["model.n_queries"] = size_field([](RunConfig& c) -> auto& { return c.model.frontend.n_queries; }, true);
    t["model.layers"] = size_field([](RunConfig& c) -> auto& { return c.model.layers; }, true);
    t["model.heads"] = size_field([](RunConfig& c) -> auto& { return c.model.heads; }, true);
    t["model.pool_size"] = size_field([](RunConfig& c) -> auto& { return c.model.pool_size; }, true);
    t["model.prompt_len"] = size_field([](RunConfig& c) -> auto& { return c.model.prompt_len; }, true);
    t["model.top_k"] = size_field([](RunConfig& c) -> auto& { return c.model.top_k; }, true);
    t["model.task_prompt_len"] = size_field([](RunConfig& c) -> auto& { return c.model.task_prompt_len; }, true);
    t["model.pooling"] = {
        [](RunConfig& c, std::string_view, std::string_view v) { c.model.pooling = pooling_from_string(trim(v)); },
        [](const RunConfig& c) { return std::string(to_string(c.model.pooling)); }, true};
    t["model.soft_mode"] = {
        [](RunConfig& c, std::string_view, std::string_view v) { c.model.soft_mode = soft_mode_from_string(trim(v)); },
        [](const RunConfig& c) { return std::string(to_string(c.model.soft_mode)); }, true};

    t["train.batch"] = size_field([](RunConfig& c) -> auto& { return c.train.batch_size; });
    t["train.lambda"] = double_field([](RunConfig& c) -> auto& { return c.train.lambda; });
    t["train.epochs"] = size_field([](RunConfig& c) -> auto& { return c.train.epochs; });
    t["train.lr_pool"] = double_field([](RunConfig& c) -> auto& { return c.train.lr_pool; });
    t["train.lr_rest"] = double_field([](RunConfig& c) -> auto& { return c.train.lr_rest; });
    t["train.key_weight"] = double_field([](RunConfig& c) -> auto& { return c.train.key_weight; });

    t["train.sibling_pairs"] = {
        [](RunConfig& c, std::string_view k, std::string_view v) { c.train.sibling_pairs = parse_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.train.sibling_pairs ? "true" : "false"); }};

    t["eval.k_list"] = {
        [](RunConfig& c, std::string_view k, std::string_view v) { c.k_list = parse_size_list(k, v); },
        [](const RunConfig& c) { return join(c.k_list); }};
    t["eval.subset_k_list"] = {
        [](RunConfig& c, std::string_view k, std::string_view v) { c.subset_k_list = parse_size_list(k, v); },
        [](const RunConfig& c) { return join(c.subset_k_list); }};

    t["seed"] = {[](RunConfig& c, std::string_view k, std::string_view v) {
                   c.seed = parse_u64(k, v);
                   c.model.seed = c.seed;
                   c.train.seed = c.seed;
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }, true};
    t["out"] = {[](RunConfig& c, std::string_view, std::string_view v) { c.out = trim(v); },
                [](const RunConfig& c) { return c.out; }};
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto it = fields().find(key);
  if (it == fields().end()) {
    throw Error(ErrorKind::InvalidConfig, "unknown config key '" + std::string(key) + "'");
  }
  it->second.set(*this, key, trim(value));
}

void RunConfig::load_text(std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::ParseError, std::string(origin) + ":" + std::to_string(lineno) +
                                             ": expected 'key = value'");
    }
    set(trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::ostringstream s;
  for (const auto& [key, field] : fields()) s << key << " = " << field.get(*this) << '\n';
  return s.str();
}

std::string RunConfig::model_text() const {
  std::ostringstream s;
  for (const auto& [key, field] : fields()) {
    if (field.model_key) s << key << " = " << field.get(*this) << '\n';
  }
  return s.str();
}

RenderConfig RunConfig::render() const {
  RenderConfig r;
  r.patches = model.frontend.patches;
  r.d_raw = model.frontend.d_raw;
  r.sigma = sigma;
  return r;
}

void RunConfig::validate() const {
  corpus.validate();
  model.validate();
  train.validate();
  if (!(sigma >= 0.0)) throw Error(ErrorKind::InvalidConfig, "render.sigma must be >= 0");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [key, field] : fields()) out.push_back(key);
  return out;
}

}  // namespace cirl
