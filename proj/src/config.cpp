#include "beliefnet/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace beliefnet::cli {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void type_error(const std::string& key, const std::string& value, const char* want,
                             int lineno) {
  std::string where = lineno >= 0 ? " at line " + std::to_string(lineno) : "";
  throw UsageError("config key '" + key + "'" + where + ": cannot parse '" + value + "' as " +
                   want);
}

int parse_int(const std::string& key, const std::string& v, int lineno) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) type_error(key, v, "int", lineno);
    return r;
  } catch (const UsageError&) {
    throw;
  } catch (...) {
    type_error(key, v, "int", lineno);
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v, int lineno) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) type_error(key, v, "unsigned int", lineno);
    return r;
  } catch (const UsageError&) {
    throw;
  } catch (...) {
    type_error(key, v, "unsigned int", lineno);
  }
}

double parse_double(const std::string& key, const std::string& v, int lineno) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) type_error(key, v, "float", lineno);
    return r;
  } catch (const UsageError&) {
    throw;
  } catch (...) {
    type_error(key, v, "float", lineno);
  }
}

bool parse_bool(const std::string& key, const std::string& v, int lineno) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  type_error(key, v, "bool", lineno);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value, int lineno) {
  if (key == "seed") seed = parse_u64(key, value, lineno);
  else if (key == "variant") variant = value;
  else if (key == "agents") agents = parse_int(key, value, lineno);
  else if (key == "hidden") hidden = parse_int(key, value, lineno);
  else if (key == "latent") latent = parse_int(key, value, lineno);
  else if (key == "vfeat") vfeat = parse_int(key, value, lineno);
  else if (key == "state_embed") state_embed = parse_int(key, value, lineno);
  else if (key == "raster_w") raster_w = parse_int(key, value, lineno);
  else if (key == "raster_h") raster_h = parse_int(key, value, lineno);
  else if (key == "grid_cols") grid_cols = parse_int(key, value, lineno);
  else if (key == "grid_rows") grid_rows = parse_int(key, value, lineno);
  else if (key == "frames_per_step") frames_per_step = parse_int(key, value, lineno);
  else if (key == "t_obs") t_obs = parse_int(key, value, lineno);
  else if (key == "t_fore") t_fore = parse_int(key, value, lineno);
  else if (key == "occlusion_period") occlusion_period = parse_int(key, value, lineno);
  else if (key == "kind") kind = value;
  else if (key == "episodes") episodes = parse_int(key, value, lineno);
  else if (key == "frames") frames = parse_int(key, value, lineno);
  else if (key == "interaction") interaction = parse_double(key, value, lineno);
  else if (key == "repulsion") repulsion = parse_double(key, value, lineno);
  else if (key == "damping") damping = parse_double(key, value, lineno);
  else if (key == "init_speed") init_speed = parse_double(key, value, lineno);
  else if (key == "carrier_switch_prob") carrier_switch_prob = parse_double(key, value, lineno);
  else if (key == "team_size") team_size = parse_int(key, value, lineno);
  else if (key == "duration_s") duration_s = parse_double(key, value, lineno);
  else if (key == "tick_rate") tick_rate = parse_int(key, value, lineno);
  else if (key == "camera_w") camera_w = parse_double(key, value, lineno);
  else if (key == "camera_h") camera_h = parse_double(key, value, lineno);
  else if (key == "beta_max") beta_max = parse_double(key, value, lineno);
  else if (key == "beta_anneal_frac") beta_anneal_frac = parse_double(key, value, lineno);
  else if (key == "gamma") gamma = parse_double(key, value, lineno);
  else if (key == "tf_decay_frac") tf_decay_frac = parse_double(key, value, lineno);
  else if (key == "lr") lr = parse_double(key, value, lineno);
  else if (key == "momentum") momentum = parse_double(key, value, lineno);
  else if (key == "warmup_steps") warmup_steps = parse_int(key, value, lineno);
  else if (key == "total_steps") total_steps = parse_int(key, value, lineno);
  else if (key == "batch") batch = parse_int(key, value, lineno);
  else if (key == "kl_on_forecast") kl_on_forecast = parse_bool(key, value, lineno);
  else if (key == "lambda_literal_max") lambda_literal_max = parse_bool(key, value, lineno);
  else if (key == "clip_norm") clip_norm = parse_double(key, value, lineno);
  else if (key == "pretrain_steps") pretrain_steps = parse_int(key, value, lineno);
  else if (key == "eval_samples") eval_samples = parse_int(key, value, lineno);
  else if (key == "eval_seed") eval_seed = parse_u64(key, value, lineno);
  else if (key == "data") data = value;
  else if (key == "train_data") train_data = value;
  else if (key == "out") out = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "checkpoints") checkpoints = value;
  else if (key == "variants") variants = value;
  else if (key == "episode") episode = parse_int(key, value, lineno);
  else if (key == "render_dir") render_dir = value;
  else {
    std::string where = lineno >= 0 ? " at line " + std::to_string(lineno) : "";
    throw UsageError("unknown config key '" + key + "'" + where);
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "seed = " << seed << "\n";
  os << "variant = " << variant << "\n";
  os << "agents = " << agents << "\n";
  os << "hidden = " << hidden << "\n";
  os << "latent = " << latent << "\n";
  os << "vfeat = " << vfeat << "\n";
  os << "state_embed = " << state_embed << "\n";
  os << "raster_w = " << raster_w << "\n";
  os << "raster_h = " << raster_h << "\n";
  os << "grid_cols = " << grid_cols << "\n";
  os << "grid_rows = " << grid_rows << "\n";
  os << "frames_per_step = " << frames_per_step << "\n";
  os << "t_obs = " << t_obs << "\n";
  os << "t_fore = " << t_fore << "\n";
  os << "occlusion_period = " << occlusion_period << "\n";
  os << "kind = " << kind << "\n";
  os << "episodes = " << episodes << "\n";
  os << "frames = " << frames << "\n";
  os << "interaction = " << interaction << "\n";
  os << "repulsion = " << repulsion << "\n";
  os << "damping = " << damping << "\n";
  os << "init_speed = " << init_speed << "\n";
  os << "carrier_switch_prob = " << carrier_switch_prob << "\n";
  os << "team_size = " << team_size << "\n";
  os << "duration_s = " << duration_s << "\n";
  os << "tick_rate = " << tick_rate << "\n";
  os << "camera_w = " << camera_w << "\n";
  os << "camera_h = " << camera_h << "\n";
  os << "beta_max = " << beta_max << "\n";
  os << "beta_anneal_frac = " << beta_anneal_frac << "\n";
  os << "gamma = " << gamma << "\n";
  os << "tf_decay_frac = " << tf_decay_frac << "\n";
  os << "lr = " << lr << "\n";
  os << "momentum = " << momentum << "\n";
  os << "warmup_steps = " << warmup_steps << "\n";
  os << "total_steps = " << total_steps << "\n";
  os << "batch = " << batch << "\n";
  os << "kl_on_forecast = " << (kl_on_forecast ? "true" : "false") << "\n";
  os << "lambda_literal_max = " << (lambda_literal_max ? "true" : "false") << "\n";
  os << "clip_norm = " << clip_norm << "\n";
  os << "pretrain_steps = " << pretrain_steps << "\n";
  os << "eval_samples = " << eval_samples << "\n";
  os << "eval_seed = " << eval_seed << "\n";
  if (!data.empty()) os << "data = " << data << "\n";
  if (!train_data.empty()) os << "train_data = " << train_data << "\n";
  if (!out.empty()) os << "out = " << out << "\n";
  if (!checkpoint.empty()) os << "checkpoint = " << checkpoint << "\n";
  if (!checkpoints.empty()) os << "checkpoints = " << checkpoints << "\n";
  if (!variants.empty()) os << "variants = " << variants << "\n";
  os << "episode = " << episode << "\n";
  if (!render_dir.empty()) os << "render_dir = " << render_dir << "\n";
  return os.str();
}

void apply_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw UsageError("config line " + std::to_string(lineno) + ": missing key");
    cfg.set(key, value, lineno);
  }
}

RunConfig parse_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_file(cfg, path);
  return cfg;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace beliefnet::cli
