#include "varcaps/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace varcaps {

PrimaryStemSpec ModelConfig::stem() const {
  PrimaryStemSpec s;
  s.input_height = image_size;
  s.input_width = image_size;
  s.channels = channels;
  s.conv1_maps = conv1_maps;
  s.kernel = kernel;
  s.conv1_stride = conv1_stride;
  s.conv2_stride = conv2_stride;
  s.feature_maps = feature_maps;
  s.capsule_dim = primary_dim;
  s.num_primary = num_primary;
  return s;
}

CapsuleLayerSpec ModelConfig::routing_spec() const {
  CapsuleLayerSpec spec;
  spec.num_lower = num_primary;
  spec.num_higher = 2 * num_classes;  // mean bank stacked on log-variance bank
  spec.dim_lower = primary_dim;
  spec.dim_higher = class_dim;
  spec.routing_iterations = routing_iterations;
  return spec;
}

void ModelConfig::validate() const {
  if (num_classes < 0 || decoder_hidden < 0)
    throw std::invalid_argument("config: counts must be nonnegative");
  if (class_dim < 1 || routing_iterations < 1)
    throw std::invalid_argument(
        "config: class_dim and routing_iterations must be >= 1");
  stem().validate();
}

void StageConfig::validate(const char* stage) const {
  if (epochs < 0 || batch_size < 1)
    throw std::invalid_argument(std::string("config [") + stage +
                                "]: epochs must be >= 0 and batch_size >= 1");
  if (learning_rate < 0.0 || !std::isfinite(learning_rate))
    throw std::invalid_argument(std::string("config [") + stage +
                                "]: learning_rate must be finite and >= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument(std::string("config [") + stage +
                                "]: momentum must lie in [0,1)");
}

void RunConfig::validate() const {
  if (!has_seed)
    throw std::invalid_argument(
        "config: seed is mandatory ([train] seed or --seed)");
  if (!(tau > 0.0 && tau < 1.0))
    throw std::invalid_argument("config: tau must lie in (0,1)");
  model.validate();
  capsules.validate("capsules");
  decoder.validate("decoder");
  margin.validate();
  total.validate();
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key +
                                "' expects an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key +
                                "' expects a number, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key +
                                "' expects a nonnegative integer, got '" +
                                value + "'");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, std::ostream& warnings) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "capsules" && section != "decoder" &&
          section != "loss" && section != "eval" && section != "train")
        throw std::invalid_argument("config: unknown section [" + section + "]");
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw std::invalid_argument("config: key '" + key +
                                  "' appears before any section");

    bool known = true;
    if (section == "model") {
      ModelConfig& m = cfg.model;
      if (key == "image_size") m.image_size = parse_int(key, value);
      else if (key == "channels") m.channels = parse_int(key, value);
      else if (key == "conv1_maps") m.conv1_maps = parse_int(key, value);
      else if (key == "kernel") m.kernel = parse_int(key, value);
      else if (key == "conv1_stride") m.conv1_stride = parse_int(key, value);
      else if (key == "conv2_stride") m.conv2_stride = parse_int(key, value);
      else if (key == "feature_maps") m.feature_maps = parse_int(key, value);
      else if (key == "num_primary") m.num_primary = parse_int(key, value);
      else if (key == "primary_dim") m.primary_dim = parse_int(key, value);
      else if (key == "num_classes") m.num_classes = parse_int(key, value);
      else if (key == "class_dim") m.class_dim = parse_int(key, value);
      else if (key == "routing_iterations") m.routing_iterations = parse_int(key, value);
      else if (key == "decoder_hidden") m.decoder_hidden = parse_int(key, value);
      else known = false;
    } else if (section == "capsules" || section == "decoder") {
      StageConfig& s = section == "capsules" ? cfg.capsules : cfg.decoder;
      if (key == "epochs") s.epochs = parse_int(key, value);
      else if (key == "batch_size") s.batch_size = parse_int(key, value);
      else if (key == "learning_rate") s.learning_rate = parse_double(key, value);
      else if (key == "momentum") s.momentum = parse_double(key, value);
      else known = false;
    } else if (section == "loss") {
      if (key == "m_plus") cfg.margin.m_plus = parse_double(key, value);
      else if (key == "m_minus") cfg.margin.m_minus = parse_double(key, value);
      else if (key == "lambda") cfg.margin.lambda = parse_double(key, value);
      else if (key == "alpha") cfg.total.alpha = parse_double(key, value);
      else if (key == "beta") cfg.total.beta = parse_double(key, value);
      else if (key == "recon_weight") cfg.total.recon_weight = parse_double(key, value);
      else if (key == "gamma") {
        parse_double(key, value);
        warnings << "warning: [loss] gamma is accepted but multiplies nothing"
                 << std::endl;
      } else known = false;
    } else if (section == "eval") {
      if (key == "tau") cfg.tau = parse_double(key, value);
      else known = false;
    } else if (section == "train") {
      if (key == "seed") {
        cfg.seed = parse_u64(key, value);
        cfg.has_seed = true;
      } else known = false;
    }
    if (!known)
      throw std::invalid_argument("config: unknown key '" + key +
                                  "' in section [" + section + "]");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path, std::ostream& warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), warnings);
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "[model]\n"
      << "image_size = " << model.image_size << "\n"
      << "channels = " << model.channels << "\n"
      << "conv1_maps = " << model.conv1_maps << "\n"
      << "kernel = " << model.kernel << "\n"
      << "conv1_stride = " << model.conv1_stride << "\n"
      << "conv2_stride = " << model.conv2_stride << "\n"
      << "feature_maps = " << model.feature_maps << "\n"
      << "num_primary = " << model.num_primary << "\n"
      << "primary_dim = " << model.primary_dim << "\n"
      << "num_classes = " << model.num_classes << "\n"
      << "class_dim = " << model.class_dim << "\n"
      << "routing_iterations = " << model.routing_iterations << "\n"
      << "decoder_hidden = " << model.decoder_hidden << "\n\n";
  auto stage = [&](const char* name, const StageConfig& s) {
    out << "[" << name << "]\n"
        << "epochs = " << s.epochs << "\n"
        << "batch_size = " << s.batch_size << "\n"
        << "learning_rate = " << fmt(s.learning_rate) << "\n"
        << "momentum = " << fmt(s.momentum) << "\n\n";
  };
  stage("capsules", capsules);
  stage("decoder", decoder);
  out << "[loss]\n"
      << "m_plus = " << fmt(margin.m_plus) << "\n"
      << "m_minus = " << fmt(margin.m_minus) << "\n"
      << "lambda = " << fmt(margin.lambda) << "\n"
      << "alpha = " << fmt(total.alpha) << "\n"
      << "beta = " << fmt(total.beta) << "\n"
      << "recon_weight = " << fmt(total.recon_weight) << "\n\n";
  out << "[eval]\ntau = " << fmt(tau) << "\n\n";
  out << "[train]\n";
  if (has_seed) out << "seed = " << seed << "\n";
  return out.str();
}

}  // namespace varcaps
