#include "idnanet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

namespace idna {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": cannot parse '" + v + "'");
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "T") return true;
  if (v == "false" || v == "0" || v == "F") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <std::size_t N>
std::array<Index, N> parse_index_list(const std::string& key, const std::string& v) {
  const auto items = split_list(v);
  if (items.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated values");
  std::array<Index, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_number<Index>(key, items[i]);
  return out;
}

template <std::size_t N>
std::array<bool, N> parse_bool_list(const std::string& key, const std::string& v) {
  const auto items = split_list(v);
  if (items.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated booleans");
  std::array<bool, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_bool(key, items[i]);
  return out;
}

template <typename T, std::size_t N>
std::string format_list(const std::array<T, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, bool>)
      out += a[i] ? "true" : "false";
    else
      out += format_number(a[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field number(const std::string& key, T& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }, [&ref] { return format_number(ref); }};
}

Field boolean(const std::string& key, bool& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_bool(key, v); }, [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field optional_seed(const std::string& key, std::optional<std::uint64_t>& ref) {
  return {key,
          [&ref, key](const std::string& v) {
            if (v == "auto")
              ref.reset();
            else
              ref = parse_number<std::uint64_t>(key, v);
          },
          [&ref] { return ref ? format_number(*ref) : std::string("auto"); }};
}

template <typename E>
Field choice(const std::string& key, E& ref, std::vector<std::pair<std::string, E>> options) {
  return {key,
          [&ref, key, options](const std::string& v) {
            for (const auto& [name, value] : options)
              if (name == v) {
                ref = value;
                return;
              }
            std::string names;
            for (const auto& o : options) names += (names.empty() ? "" : ", ") + o.first;
            throw ConfigError(key + ": unknown value '" + v + "' (" + names + ")");
          },
          [&ref, options] {
            for (const auto& [name, value] : options)
              if (value == ref) return name;
            return std::string("?");
          }};
}

std::vector<Field> fields(RunConfig& c) {
  auto& b = c.model.backbone;
  auto& s = c.data.synth;
  std::vector<Field> f;
  f.push_back(number("model.embed_dim", b.embed_dim));
  f.push_back({"model.depths", [&b](const std::string& v) { b.depths = parse_index_list<4>("model.depths", v); },
               [&b] { return format_list(b.depths); }});
  f.push_back({"model.heads", [&b](const std::string& v) { b.heads = parse_index_list<4>("model.heads", v); },
               [&b] { return format_list(b.heads); }});
  f.push_back(number("model.window", b.window));
  f.push_back(number("model.patch", b.patch));
  f.push_back(number("model.mlp_ratio", b.mlp_ratio));
  f.push_back(number("model.cpb_hidden", b.cpb_hidden));
  f.push_back(choice("model.norm", b.norm, {{"pre", NormPlacement::pre}, {"post", NormPlacement::post}}));
  f.push_back({"model.ab_mask", [&c](const std::string& v) { c.model.ab_mask = parse_bool_list<4>("model.ab_mask", v); },
               [&c] { return format_list(c.model.ab_mask); }});
  f.push_back(number("model.acmix_heads", c.model.acmix_heads));
  f.push_back(choice("model.acmix_fuse", c.model.acmix_fuse, {{"concat", FuseMode::concat}, {"add", FuseMode::add}}));
  f.push_back(boolean("model.acmix_relu", c.model.acmix_relu));
  f.push_back(number("model.rcb_reduction", c.model.rcb_reduction));
  f.push_back(number("model.norm_groups", c.model.norm_groups));
  f.push_back(choice("model.down", c.model.align.down,
                     {{"max_pool", DownsampleMode::max_pool}, {"avg_pool", DownsampleMode::avg_pool}}));
  f.push_back(choice("model.up", c.model.align.up, {{"bilinear", UpsampleMode::bilinear}, {"nearest", UpsampleMode::nearest}}));
  f.push_back(number("model.head_width", c.model.head_width));

  f.push_back(number("loss.alpha", c.loss.alpha));
  f.push_back(number("loss.mu", c.loss.mu));
  f.push_back({"loss.active_mask", [&c](const std::string& v) { c.loss.active = parse_bool_list<5>("loss.active_mask", v); },
               [&c] { return format_list(c.loss.active); }});
  f.push_back(number("loss.eps_dice", c.loss.eps_dice));
  f.push_back(number("loss.eps_log", c.loss.eps_log));
  f.push_back(optional_seed("loss.lambda_seed", c.lambda_seed));

  f.push_back(choice("optim.algorithm", c.optim.algorithm, {{"adagrad", std::string("adagrad")}}));
  f.push_back(number("optim.lr", c.optim.lr));
  f.push_back(number("optim.batch", c.optim.batch));
  f.push_back(number("optim.epochs", c.optim.epochs));
  f.push_back(number("optim.seed", c.optim.seed));
  f.push_back(number("optim.eps", c.optim.eps));
  f.push_back(number("optim.initial_accumulator", c.optim.initial_accumulator));
  f.push_back(number("optim.checkpoint_every", c.optim.checkpoint_every));
  f.push_back(number("optim.lambda_lr_scale", c.optim.lambda_lr_scale));

  f.push_back({"data.root", [&c](const std::string& v) { c.data.root = v; }, [&c] { return c.data.root; }});
  f.push_back(number("data.image_size", c.data.image_size));
  f.push_back(number("data.synth_count", s.count));
  f.push_back(optional_seed("data.synth_seed", c.data.synth_seed));
  f.push_back(number("data.targets_min", s.targets_min));
  f.push_back(number("data.targets_max", s.targets_max));
  f.push_back(number("data.sigma_min", s.sigma_min));
  f.push_back(number("data.sigma_max", s.sigma_max));
  f.push_back(number("data.contrast_min", s.contrast_min));
  f.push_back(number("data.contrast_max", s.contrast_max));
  f.push_back(choice("data.background", s.background,
                     {{"gradient-sky", Background::gradient_sky}, {"filtered-noise", Background::filtered_noise}, {"mixed", Background::mixed}}));

  f.push_back(number("eval.tau", c.eval.tau));
  f.push_back(number("eval.dist_max", c.eval.dist_max));
  f.push_back(number("eval.roc_points", c.eval.roc_points));
  f.push_back(choice("eval.miou_mode", c.eval.miou_mode, {{"dataset", MiouMode::dataset}, {"per_image", MiouMode::per_image}}));
  return f;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  auto table = fields(cfg);
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    it->set(value);
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::string out;
  for (const auto& f : fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

void RunConfig::validate() const {
  model.backbone.validate(data.image_size, data.image_size);
  if (data.image_size % 32 != 0) throw ConfigError("data.image_size must be a multiple of 32");
  if (model.acmix_heads < 1 || model.rcb_reduction < 1 || model.head_width < 0)
    throw ConfigError("model: acmix_heads and rcb_reduction must be positive, head_width non-negative");
  if (model.norm_groups < 0) throw ConfigError("model.norm_groups must be non-negative");
  if (model.norm_groups > 0)
    for (Index i = 0; i < 4; ++i) {
      const Index ch = model.backbone.stage_channels(i);
      if (ch % model.norm_groups != 0)
        throw ConfigError("model.norm_groups = " + std::to_string(model.norm_groups) + " does not divide " +
                          std::to_string(ch) + " channels");
    }
  for (Index i = 0; i < 4; ++i)
    if (model.ab_mask[static_cast<std::size_t>(i)] && model.backbone.stage_channels(i) % model.acmix_heads != 0)
      throw ConfigError("model.acmix_heads must divide every AB row's channel count");
  loss.validate();
  if (!(optim.lr > 0)) throw ConfigError("optim.lr must be positive");
  if (optim.batch < 1) throw ConfigError("optim.batch must be at least 1");
  if (optim.epochs < 0) throw ConfigError("optim.epochs must be non-negative");
  if (!(optim.eps > 0)) throw ConfigError("optim.eps must be positive");
  if (!(optim.initial_accumulator >= 0)) throw ConfigError("optim.initial_accumulator must be non-negative");
  if (optim.lambda_lr_scale < 0) throw ConfigError("optim.lambda_lr_scale must be non-negative");
  if (optim.checkpoint_every < 0) throw ConfigError("optim.checkpoint_every must be non-negative");
  if (data.root.empty()) synth_config().validate();
  if (!(eval.tau >= 0 && eval.tau <= 1)) throw ConfigError("eval.tau must lie in [0,1]");
  if (eval.dist_max < 0) throw ConfigError("eval.dist_max must be non-negative");
  if (eval.roc_points < 2) throw ConfigError("eval.roc_points must be at least 2");
}

std::uint64_t derive_seed(std::uint64_t global, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(global), static_cast<std::uint32_t>(global >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::uint64_t RunConfig::model_seed() const { return derive_seed(optim.seed, 1); }
std::uint64_t RunConfig::effective_lambda_seed() const { return lambda_seed.value_or(derive_seed(optim.seed, 2)); }
std::uint64_t RunConfig::effective_synth_seed() const { return data.synth_seed.value_or(derive_seed(optim.seed, 3)); }

SynthConfig RunConfig::synth_config() const {
  SynthConfig s = data.synth;
  s.seed = effective_synth_seed();
  s.image_size = data.image_size;
  return s;
}

}  // namespace idna
