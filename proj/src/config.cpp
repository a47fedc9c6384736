#include "ltibayes/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace ltibayes {

namespace toml {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// strips a trailing comment that is not inside a quoted string
std::string strip_comment(const std::string& s) {
  bool in_quote = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_quote = !in_quote;
    if (s[i] == '#' && !in_quote) return s.substr(0, i);
  }
  return s;
}

Value parse_scalar(const std::string& tok, int line_no) {
  if (tok == "true") return true;
  if (tok == "false") return false;
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    return tok.substr(1, tok.size() - 2);
  }
  try {
    size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos == tok.size()) return v;
  } catch (...) {
  }
  throw ConfigError("config line " + std::to_string(line_no) +
                    ": cannot parse value '" + tok + "'");
}

Value parse_value(const std::string& raw, int line_no) {
  const std::string v = trim(raw);
  if (v.empty()) {
    throw ConfigError("config line " + std::to_string(line_no) +
                      ": empty value");
  }
  if (v.front() == '[') {
    if (v.back() != ']') {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unterminated array");
    }
    std::vector<double> nums;
    std::vector<std::string> strs;
    bool any_str = false;
    std::string inner = v.substr(1, v.size() - 2);
    std::string tok;
    std::istringstream ss(inner);
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      Value sv = parse_scalar(tok, line_no);
      if (std::holds_alternative<double>(sv)) {
        nums.push_back(std::get<double>(sv));
      } else if (std::holds_alternative<std::string>(sv)) {
        strs.push_back(std::get<std::string>(sv));
        any_str = true;
      } else {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": arrays hold numbers or strings only");
      }
    }
    if (any_str) {
      if (!nums.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": mixed array types");
      }
      return strs;
    }
    return nums;
  }
  return parse_scalar(v, line_no);
}

}  // namespace

Table parse(const std::string& text) {
  Table t;
  std::string section;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty section name");
      }
      t.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    }
    t.sections[section][key] = parse_value(line.substr(eq + 1), line_no);
  }
  return t;
}

Table parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

bool Table::has(const std::string& section, const std::string& key) const {
  const auto s = sections.find(section);
  return s != sections.end() && s->second.count(key) > 0;
}

namespace {
const Value& fetch(const Table& t, const std::string& s,
                   const std::string& k) {
  const auto si = t.sections.find(s);
  if (si == t.sections.end() || !si->second.count(k)) {
    throw ConfigError("config: missing key [" + s + "] " + k);
  }
  return si->second.at(k);
}
}  // namespace

double Table::number(const std::string& s, const std::string& k) const {
  const auto& v = fetch(*this, s, k);
  if (!std::holds_alternative<double>(v)) {
    throw ConfigError("config: [" + s + "] " + k + " must be a number");
  }
  return std::get<double>(v);
}
double Table::number_or(const std::string& s, const std::string& k,
                        double fallback) const {
  return has(s, k) ? number(s, k) : fallback;
}
int Table::integer(const std::string& s, const std::string& k) const {
  const double v = number(s, k);
  const int i = static_cast<int>(std::llround(v));
  if (std::abs(v - i) > 1e-9) {
    throw ConfigError("config: [" + s + "] " + k + " must be an integer");
  }
  return i;
}
int Table::integer_or(const std::string& s, const std::string& k,
                      int fallback) const {
  return has(s, k) ? integer(s, k) : fallback;
}
bool Table::boolean_or(const std::string& s, const std::string& k,
                       bool fallback) const {
  if (!has(s, k)) return fallback;
  const auto& v = fetch(*this, s, k);
  if (!std::holds_alternative<bool>(v)) {
    throw ConfigError("config: [" + s + "] " + k + " must be true/false");
  }
  return std::get<bool>(v);
}
std::string Table::string_or(const std::string& s, const std::string& k,
                             const std::string& fallback) const {
  if (!has(s, k)) return fallback;
  const auto& v = fetch(*this, s, k);
  if (!std::holds_alternative<std::string>(v)) {
    throw ConfigError("config: [" + s + "] " + k + " must be a string");
  }
  return std::get<std::string>(v);
}
std::vector<double> Table::numbers(const std::string& s,
                                   const std::string& k) const {
  const auto& v = fetch(*this, s, k);
  if (std::holds_alternative<std::vector<double>>(v)) {
    return std::get<std::vector<double>>(v);
  }
  if (std::holds_alternative<double>(v)) return {std::get<double>(v)};
  throw ConfigError("config: [" + s + "] " + k + " must be a number array");
}

}  // namespace toml

void RunConfig::resolve() {
  if (truth.center_x < 0) truth.center_x = wave.length / 2;
  if (truth.sigma_x < 0) truth.sigma_x = 8 * wave.h_x;
}

void RunConfig::validate() const {
  wave.validate();
  if (!(prior.delta > 0)) throw ConfigError("[prior] delta must be positive");
  if (noise.rel < 0) throw ConfigError("[noise] rel must be >= 0");
  if (!(truth.rise_time > 0)) {
    throw ConfigError("[truth] rise_time must be positive");
  }
  if (!(truth.sigma_x > 0)) throw ConfigError("[truth] sigma_x must be positive");
  if (out_dir.empty()) throw ConfigError("[paths] out_dir must be nonempty");
  for (int nt : bench.nt_sweep) {
    if (nt < 2) throw ConfigError("[bench] nt_sweep entries must be >= 2");
  }
  if (bench.nd < 1 || bench.nm < 1) {
    throw ConfigError("[bench] nd/nm must be >= 1");
  }
}

RunConfig config_from_table(const toml::Table& t) {
  RunConfig c;
  auto& w = c.wave;
  w.length = t.number_or("wave", "length", w.length);
  w.depth = t.number_or("wave", "depth", w.depth);
  w.h_x = t.number_or("wave", "hx", w.h_x);
  w.h_z = t.number_or("wave", "hz", w.h_z);
  w.rho = t.number_or("wave", "rho", w.rho);
  if (t.has("wave", "sound_speed")) {
    const double cs = t.number("wave", "sound_speed");
    w.bulk_modulus = w.rho * cs * cs;
  }
  w.bulk_modulus = t.number_or("wave", "bulk_modulus", w.bulk_modulus);
  w.gravity = t.number_or("wave", "gravity", w.gravity);
  w.absorbing_lateral =
      t.boolean_or("wave", "absorbing_lateral", w.absorbing_lateral);
  w.substeps = t.integer_or("wave", "substeps", w.substeps);
  w.cfl_factor = t.number_or("wave", "cfl_factor", w.cfl_factor);
  w.n_time = t.integer_or("dims", "n_time", w.n_time);
  w.dt_obs = t.number_or("dims", "dt_obs", w.dt_obs);

  const bool sensors_listed = t.has("wave", "sensor_x");
  const bool sensors_counted = t.has("wave", "sensor_count");
  if (sensors_listed && sensors_counted) {
    throw ConfigError("config: give [wave] sensor_x or sensor_count, not both");
  }
  if (sensors_listed) {
    w.sensor_x = t.numbers("wave", "sensor_x");
  } else if (sensors_counted) {
    w.sensor_x = WaveConfig::spread_positions(
        t.integer("wave", "sensor_count"), w.length,
        t.number_or("wave", "sensor_margin", 0.1));
  }
  const bool qoi_listed = t.has("wave", "qoi_x");
  const bool qoi_counted = t.has("wave", "qoi_count");
  if (qoi_listed && qoi_counted) {
    throw ConfigError("config: give [wave] qoi_x or qoi_count, not both");
  }
  if (qoi_listed) {
    w.qoi_x = t.numbers("wave", "qoi_x");
  } else if (qoi_counted) {
    w.qoi_x = WaveConfig::spread_positions(
        t.integer("wave", "qoi_count"), w.length,
        t.number_or("wave", "qoi_margin", 0.15));
  }

  c.prior.gamma = t.number_or("prior", "gamma", c.prior.gamma);
  c.prior.delta = t.number_or("prior", "delta", c.prior.delta);
  c.noise.rel = t.number_or("noise", "rel", c.noise.rel);
  c.noise.seed =
      static_cast<uint64_t>(t.number_or("noise", "seed", 1.0));
  c.truth.center_x = t.number_or("truth", "center_x", -1.0);
  c.truth.sigma_x = t.number_or("truth", "sigma_x", -1.0);
  c.truth.rise_time = t.number_or("truth", "rise_time", c.truth.rise_time);
  c.truth.amplitude = t.number_or("truth", "amplitude", c.truth.amplitude);
  c.out_dir = t.string_or("paths", "out_dir", c.out_dir);

  if (t.has("bench", "nt_sweep")) {
    c.bench.nt_sweep.clear();
    for (double v : t.numbers("bench", "nt_sweep")) {
      c.bench.nt_sweep.push_back(static_cast<int>(std::llround(v)));
    }
  }
  c.bench.nd = t.integer_or("bench", "nd", c.bench.nd);
  c.bench.nm = t.integer_or("bench", "nm", c.bench.nm);
  c.bench.repeats = t.integer_or("bench", "repeats", c.bench.repeats);
  c.bench.run_cg = t.boolean_or("bench", "cg", c.bench.run_cg);
  c.bench.cg_tol = t.number_or("bench", "cg_tol", c.bench.cg_tol);
  c.bench.cg_max_iter =
      t.integer_or("bench", "cg_max_iter", c.bench.cg_max_iter);

  c.resolve();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  return config_from_table(toml::parse_file(path));
}

RunConfig reference_config() {
  RunConfig c;
  c.wave.length = 102000.0;
  c.wave.depth = 4000.0;
  c.wave.h_x = 400.0;   // 255 cells -> N_m = 256
  c.wave.h_z = 250.0;   // 16 cells
  c.wave.n_time = 128;
  c.wave.dt_obs = 1.0;
  c.wave.substeps = 16;
  c.wave.sensor_x = WaveConfig::spread_positions(16, c.wave.length, 0.1);
  c.wave.qoi_x = WaveConfig::spread_positions(4, c.wave.length, 0.2);
  c.resolve();
  c.validate();
  return c;
}

RunConfig tiny_config() {
  RunConfig c;
  c.wave.length = 32000.0;
  c.wave.depth = 4000.0;
  c.wave.h_x = 1000.0;  // 32 cells -> N_m = 33
  c.wave.h_z = 500.0;   // 8 cells
  c.wave.n_time = 16;
  c.wave.dt_obs = 1.0;
  c.wave.substeps = 8;
  c.wave.sensor_x = WaveConfig::spread_positions(3, c.wave.length, 0.15);
  c.wave.qoi_x = WaveConfig::spread_positions(2, c.wave.length, 0.25);
  c.truth.rise_time = 6.0;
  c.resolve();
  c.validate();
  return c;
}

}  // namespace ltibayes
