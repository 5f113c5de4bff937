#pragma once

// Scenario files, benchmark matrices and their CSV/table outputs.
//
// Scenario and benchmark files are YAML documents carrying `schema: 1`. Every
// key is optional except `path`; see README.md for the full schema. Parsing
// rejects unknown keys and reports the offending line and field.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "resafe/error.hpp"
#include "resafe/sim.hpp"

namespace resafe::harness {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputDirEnv = "RESAFE_OUT_DIR";

/// Malformed or invalid scenario/benchmark file. `line` is 1-based, 0 when unknown.
class ScenarioError : public DomainError {
 public:
  ScenarioError(const std::string& source, int line, const std::string& field, const std::string& msg)
      : DomainError(format(source, line, field, msg)), line_(line), field_(field) {}
  [[nodiscard]] int line() const { return line_; }
  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& source, int line, const std::string& field, const std::string& msg) {
    std::string out = source;
    if (line > 0) out += ":" + std::to_string(line);
    out += ": ";
    if (!field.empty()) out += field + ": ";
    return out + msg;
  }
  int line_;
  std::string field_;
};

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

/// Shortest round-trip decimal text.
inline std::string format_number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, r.ptr};
}

inline std::string format_number(std::uint64_t v) { return std::to_string(v); }

/// Canonical text for a scalar read back from a file: numbers are reformatted, the rest kept.
inline std::string canonical_scalar(const std::string& s) {
  long long i = 0;
  auto ri = std::from_chars(s.data(), s.data() + s.size(), i);
  if (ri.ec == std::errc() && ri.ptr == s.data() + s.size()) return std::to_string(i);
  std::uint64_t u = 0;
  auto ru = std::from_chars(s.data(), s.data() + s.size(), u);
  if (ru.ec == std::errc() && ru.ptr == s.data() + s.size()) return std::to_string(u);
  double d = 0.0;
  auto rd = std::from_chars(s.data(), s.data() + s.size(), d);
  if (rd.ec == std::errc() && rd.ptr == s.data() + s.size()) return format_number(d);
  return s;
}

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& field, const std::string& msg) const {
    throw ScenarioError(source_, line_of(n), field, msg);
  }

  void require_map(const YAML::Node& n, const std::string& field) const {
    if (!n.IsMap()) fail(n, field, "expected a mapping");
  }

  void check_keys(const YAML::Node& map, const std::vector<std::string>& allowed, const std::string& prefix) const {
    require_map(map, prefix.empty() ? "document" : prefix);
    for (const auto& kv : map) {
      const std::string key = kv.first.as<std::string>();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        fail(kv.first, join(prefix, key), "unknown field");
      }
    }
  }

  template <class T>
  T get(const YAML::Node& map, const std::string& key, T fallback, const std::string& prefix) const {
    const YAML::Node n = map[key];
    if (!n) return fallback;
    return convert<T>(n, join(prefix, key));
  }

  template <class T>
  T convert(const YAML::Node& n, const std::string& field) const {
    if (!n.IsScalar()) fail(n, field, "expected a scalar");
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, field, "cannot read '" + n.Scalar() + "' as " + type_name<T>());
    }
  }

  std::vector<double> numbers(const YAML::Node& map, const std::string& key, const std::string& prefix) const {
    const YAML::Node n = map[key];
    const std::string field = join(prefix, key);
    if (!n) fail(map, field, "missing required field");
    if (!n.IsSequence()) fail(n, field, "expected a list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(convert<double>(n[i], field + "[" + std::to_string(i) + "]"));
    return out;
  }

  static std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
  }

  [[nodiscard]] const std::string& source() const { return source_; }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a string";
  }
  std::string source_;
};

inline YAML::Node load_document(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ScenarioError(source, e.mark.line + 1, "", e.msg);
  }
  if (!root.IsMap()) throw ScenarioError(source, 1, "", "document must be a mapping");
  const YAML::Node schema = root["schema"];
  if (!schema) throw ScenarioError(source, 1, "schema", "missing required field");
  Reader rd(source);
  if (rd.convert<int>(schema, "schema") != kSchemaVersion) {
    rd.fail(schema, "schema", "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  return root;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ScenarioError(p.string(), 0, "", "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Canonical YAML node helpers: every leaf is a string scalar already formatted.
inline YAML::Node num(double v) { return YAML::Node(format_number(v)); }

inline YAML::Node num_list(const std::vector<double>& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (double x : v) n.push_back(num(x));
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

inline void emit_node(YAML::Emitter& out, const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Map:
      out << (n.Style() == YAML::EmitterStyle::Flow ? YAML::Flow : YAML::Block) << YAML::BeginMap;
      for (const auto& kv : n) {
        out << YAML::Key << kv.first.Scalar() << YAML::Value;
        emit_node(out, kv.second);
      }
      out << YAML::EndMap;
      break;
    case YAML::NodeType::Sequence:
      out << (n.Style() == YAML::EmitterStyle::Flow ? YAML::Flow : YAML::Block) << YAML::BeginSeq;
      for (const auto& e : n) emit_node(out, e);
      out << YAML::EndSeq;
      break;
    case YAML::NodeType::Scalar: out << n.Scalar(); break;
    default: out << YAML::Null; break;
  }
}

inline std::string emit_document(const YAML::Node& n) {
  YAML::Emitter out;
  emit_node(out, n);
  return std::string(out.c_str()) + "\n";
}

inline const std::vector<std::pair<std::string, int>>& state_keys() {
  using namespace vehicle;
  static const std::vector<std::pair<std::string, int>> keys = {
      {"s", kS},         {"w", kW},     {"heading_error", kHeadingError}, {"vx", kVx},
      {"vy", kVy},       {"yaw_rate", kYawRate}, {"steer", kSteer},       {"throttle", kThrottle}};
  return keys;
}

struct ParamField {
  const char* key;
  double vehicle::VehicleParams::*ptr;
};

inline const std::vector<ParamField>& vehicle_fields() {
  using P = vehicle::VehicleParams;
  static const std::vector<ParamField> f = {
      {"mass", &P::mass},           {"yaw_inertia", &P::yaw_inertia}, {"lf", &P::lf},
      {"lr", &P::lr},               {"cf", &P::cf},                   {"cr", &P::cr},
      {"max_force", &P::max_force}, {"front_drive_share", &P::front_drive_share},
      {"c0", &P::c0},               {"c2", &P::c2},                   {"blend_low", &P::blend_low},
      {"blend_high", &P::blend_high}, {"max_steer", &P::max_steer}};
  return f;
}

inline std::vector<std::string> keys_of(const YAML::Node& canonical) {
  std::vector<std::string> k;
  for (const auto& kv : canonical) k.push_back(kv.first.Scalar());
  return k;
}

}  // namespace detail

/// Canonical YAML tree of one obstacle script.
inline YAML::Node obstacle_to_node(const sim::ObstacleScript& o) {
  using detail::num;
  YAML::Node n(YAML::NodeType::Map);
  n["motion"] = sim::to_string(o.kind);
  n["s"] = num(o.s0);
  n["w"] = num(o.w0);
  n["vs"] = num(o.vs);
  n["vw"] = num(o.vw);
  n["a"] = num(o.a);
  n["b"] = num(o.b);
  n["appear_time"] = num(o.appear_time);
  n["move_time"] = num(o.move_time);
  n["jitter_s"] = num(o.jitter_s);
  n["jitter_w"] = num(o.jitter_w);
  n["detection_range"] = num(o.detection_range);
  return n;
}

/// Canonical YAML tree of a scenario: every field present, fixed key order.
inline YAML::Node scenario_to_node(const sim::Scenario& sc) {
  using detail::num;
  using detail::num_list;
  YAML::Node root(YAML::NodeType::Map);
  root["schema"] = std::to_string(kSchemaVersion);
  root["name"] = sc.name;

  YAML::Node path(YAML::NodeType::Map);
  path["breakpoints"] = num_list(sc.path.breakpoints());
  path["curvature"] = num_list(sc.path.curvature_values());
  path["width_left"] = num_list(sc.path.width_left_values());
  path["width_right"] = num_list(sc.path.width_right_values());
  YAML::Node origin(YAML::NodeType::Map);
  origin["x"] = num(sc.path.origin().x);
  origin["y"] = num(sc.path.origin().y);
  origin["heading"] = num(sc.path.origin().heading);
  origin.SetStyle(YAML::EmitterStyle::Flow);
  path["origin"] = origin;
  root["path"] = path;

  YAML::Node init(YAML::NodeType::Map);
  for (const auto& [key, idx] : detail::state_keys()) init[key] = num(sc.x0(idx));
  root["initial_state"] = init;
  root["target_speed"] = num(sc.target_speed);
  root["horizon"] = num(sc.horizon);
  root["duration"] = num(sc.duration);
  root["seed"] = detail::format_number(sc.seed);

  YAML::Node ctrl(YAML::NodeType::Map);
  ctrl["method"] = transcription::to_string(sc.method);
  ctrl["cbf"] = sc.cbf ? "true" : "false";
  ctrl["regions"] = std::to_string(sc.regions);
  ctrl["degree"] = std::to_string(sc.degree);
  ctrl["nodes"] = std::to_string(sc.nodes);
  ctrl["shooting_nodes"] = std::to_string(sc.shooting_nodes);
  ctrl["sqp_iterations"] = std::to_string(sc.sqp_iterations);
  ctrl["k1"] = num(sc.gains.k1);
  ctrl["k2"] = num(sc.gains.k2);
  root["controller"] = ctrl;

  YAML::Node veh(YAML::NodeType::Map);
  for (const auto& f : detail::vehicle_fields()) veh[f.key] = num(sc.model.*f.ptr);
  root["vehicle"] = veh;

  YAML::Node mm(YAML::NodeType::Map);
  mm["mass"] = num(sc.mismatch.mass);
  mm["stiffness"] = num(sc.mismatch.stiffness);
  mm["inertia"] = num(sc.mismatch.inertia);
  root["plant_mismatch"] = mm;

  YAML::Node obs(YAML::NodeType::Sequence);
  for (const auto& o : sc.obstacles) obs.push_back(obstacle_to_node(o));
  root["obstacles"] = obs;
  return root;
}

/// Scenario file text in canonical form.
inline std::string write_scenario(const sim::Scenario& sc) { return detail::emit_document(scenario_to_node(sc)); }

/// Parses and validates scenario text. `source` names the text in error messages.
inline sim::Scenario parse_scenario_text(const std::string& text, const std::string& source = "<scenario>") {
  using detail::Reader;
  const YAML::Node root = detail::load_document(text, source);
  const Reader rd(source);
  const sim::Scenario def;
  const YAML::Node canon = scenario_to_node(def);
  rd.check_keys(root, detail::keys_of(canon), "");

  sim::Scenario sc;
  sc.name = rd.get<std::string>(root, "name", def.name, "");

  const YAML::Node pn = root["path"];
  if (!pn) rd.fail(root, "path", "missing required field");
  rd.check_keys(pn, detail::keys_of(canon["path"]), "path");
  vehicle::Pose origin;
  if (const YAML::Node on = pn["origin"]) {
    rd.check_keys(on, {"x", "y", "heading"}, "path.origin");
    origin.x = rd.get<double>(on, "x", 0.0, "path.origin");
    origin.y = rd.get<double>(on, "y", 0.0, "path.origin");
    origin.heading = rd.get<double>(on, "heading", 0.0, "path.origin");
  }
  try {
    sc.path = vehicle::PathModel(rd.numbers(pn, "breakpoints", "path"), rd.numbers(pn, "curvature", "path"),
                                 rd.numbers(pn, "width_left", "path"), rd.numbers(pn, "width_right", "path"), origin);
  } catch (const ScenarioError&) {
    throw;
  } catch (const DomainError& e) {
    rd.fail(pn, "path", e.what());
  }

  if (const YAML::Node in = root["initial_state"]) {
    rd.check_keys(in, detail::keys_of(canon["initial_state"]), "initial_state");
    for (const auto& [key, idx] : detail::state_keys()) sc.x0(idx) = rd.get<double>(in, key, 0.0, "initial_state");
  }
  sc.target_speed = rd.get<double>(root, "target_speed", def.target_speed, "");
  sc.horizon = rd.get<double>(root, "horizon", def.horizon, "");
  sc.duration = rd.get<double>(root, "duration", def.duration, "");
  sc.seed = rd.get<std::uint64_t>(root, "seed", def.seed, "");

  if (const YAML::Node cn = root["controller"]) {
    rd.check_keys(cn, detail::keys_of(canon["controller"]), "controller");
    const std::string method = rd.get<std::string>(cn, "method", transcription::to_string(def.method), "controller");
    try {
      sc.method = transcription::parse_method(method);
    } catch (const DomainError& e) {
      rd.fail(cn["method"], "controller.method", e.what());
    }
    sc.cbf = rd.get<bool>(cn, "cbf", def.cbf, "controller");
    sc.regions = rd.get<int>(cn, "regions", def.regions, "controller");
    sc.degree = rd.get<int>(cn, "degree", def.degree, "controller");
    sc.nodes = rd.get<int>(cn, "nodes", def.nodes, "controller");
    sc.shooting_nodes = rd.get<int>(cn, "shooting_nodes", def.shooting_nodes, "controller");
    sc.sqp_iterations = rd.get<int>(cn, "sqp_iterations", def.sqp_iterations, "controller");
    sc.gains.k1 = rd.get<double>(cn, "k1", def.gains.k1, "controller");
    sc.gains.k2 = rd.get<double>(cn, "k2", def.gains.k2, "controller");
  }
  if (const YAML::Node vn = root["vehicle"]) {
    rd.check_keys(vn, detail::keys_of(canon["vehicle"]), "vehicle");
    for (const auto& f : detail::vehicle_fields()) sc.model.*f.ptr = rd.get<double>(vn, f.key, def.model.*f.ptr, "vehicle");
  }
  if (const YAML::Node mn = root["plant_mismatch"]) {
    rd.check_keys(mn, detail::keys_of(canon["plant_mismatch"]), "plant_mismatch");
    sc.mismatch.mass = rd.get<double>(mn, "mass", def.mismatch.mass, "plant_mismatch");
    sc.mismatch.stiffness = rd.get<double>(mn, "stiffness", def.mismatch.stiffness, "plant_mismatch");
    sc.mismatch.inertia = rd.get<double>(mn, "inertia", def.mismatch.inertia, "plant_mismatch");
  }
  if (const YAML::Node on = root["obstacles"]) {
    if (!on.IsSequence()) rd.fail(on, "obstacles", "expected a list");
    const sim::ObstacleScript od;
    const std::vector<std::string> okeys = detail::keys_of(obstacle_to_node(od));
    for (std::size_t i = 0; i < on.size(); ++i) {
      const YAML::Node o = on[i];
      const std::string pre = "obstacles[" + std::to_string(i) + "]";
      rd.check_keys(o, okeys, pre);
      sim::ObstacleScript ob;
      try {
        ob.kind = sim::parse_motion(rd.get<std::string>(o, "motion", sim::to_string(od.kind), pre));
      } catch (const ScenarioError&) {
        throw;
      } catch (const DomainError& e) {
        rd.fail(o["motion"], pre + ".motion", e.what());
      }
      ob.s0 = rd.get<double>(o, "s", od.s0, pre);
      ob.w0 = rd.get<double>(o, "w", od.w0, pre);
      ob.vs = rd.get<double>(o, "vs", od.vs, pre);
      ob.vw = rd.get<double>(o, "vw", od.vw, pre);
      ob.a = rd.get<double>(o, "a", od.a, pre);
      ob.b = rd.get<double>(o, "b", od.b, pre);
      ob.appear_time = rd.get<double>(o, "appear_time", od.appear_time, pre);
      ob.move_time = rd.get<double>(o, "move_time", od.move_time, pre);
      ob.jitter_s = rd.get<double>(o, "jitter_s", od.jitter_s, pre);
      ob.jitter_w = rd.get<double>(o, "jitter_w", od.jitter_w, pre);
      ob.detection_range = rd.get<double>(o, "detection_range", od.detection_range, pre);
      try {
        ob.validate();
      } catch (const DomainError& e) {
        rd.fail(o, pre, e.what());
      }
      sc.obstacles.push_back(ob);
    }
  }
  try {
    sc.validate();
  } catch (const DomainError& e) {
    rd.fail(root, "scenario", e.what());
  }
  return sc;
}

inline sim::Scenario parse_scenario(const std::filesystem::path& file) {
  return parse_scenario_text(detail::read_file(file), file.string());
}

namespace detail {

// Overlays a parsed document on the canonical default tree, key by key.
inline YAML::Node overlay(const YAML::Node& base, const YAML::Node& file) {
  if (!file) return YAML::Clone(base);
  if (base.IsMap() && file.IsMap()) {
    YAML::Node out(YAML::NodeType::Map);
    out.SetStyle(base.Style());
    for (const auto& kv : base) {
      const std::string key = kv.first.Scalar();
      out[key] = overlay(kv.second, file[key]);
    }
    return out;
  }
  if (file.IsSequence()) {
    YAML::Node out(YAML::NodeType::Sequence);
    out.SetStyle(base.Style());
    for (const auto& e : file) out.push_back(overlay(YAML::Node(), e));
    return out;
  }
  if (file.IsScalar()) {
    if (base.IsScalar() && (base.Scalar() == "true" || base.Scalar() == "false")) {
      return YAML::Node(file.as<bool>() ? "true" : "false");
    }
    return YAML::Node(canonical_scalar(file.Scalar()));
  }
  return YAML::Clone(file);
}

}  // namespace detail

/// Canonical form of a scenario file built from the raw document alone:
/// defaults filled in, keys ordered, numbers reformatted. Serves as the
/// independent side of the writer round-trip check.
inline std::string normalize_scenario_text(const std::string& text, const std::string& source = "<scenario>") {
  const YAML::Node root = detail::load_document(text, source);
  YAML::Node canon = scenario_to_node(sim::Scenario{});
  canon = detail::overlay(canon, root);
  if (root["obstacles"]) {
    YAML::Node obs(YAML::NodeType::Sequence);
    const YAML::Node od = obstacle_to_node(sim::ObstacleScript{});
    for (const auto& o : root["obstacles"]) obs.push_back(detail::overlay(od, o));
    canon["obstacles"] = obs;
  }
  YAML::Node path = canon["path"];
  for (const char* key : {"breakpoints", "curvature", "width_left", "width_right"}) {
    path[key].SetStyle(YAML::EmitterStyle::Flow);
  }
  return detail::emit_document(canon);
}

// ---------------------------------------------------------------------------
// Benchmarks

/// One controller configuration of a benchmark matrix.
struct MethodSpec {
  transcription::Method method = transcription::Method::kResafeCol;
  bool cbf = false;

  [[nodiscard]] std::string label() const {
    return std::string(transcription::to_string(method)) + (cbf ? "+cbf" : "");
  }
};

/// Parses "dms", "psc", "resafecol" with an optional "+cbf" suffix.
inline MethodSpec parse_method_spec(const std::string& s) {
  MethodSpec m;
  std::string base = s;
  const std::string suffix = "+cbf";
  if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
    m.cbf = true;
    base.resize(base.size() - suffix.size());
  }
  m.method = transcription::parse_method(base);
  if (m.cbf && m.method == transcription::Method::kDms) {
    throw DomainError("method 'dms+cbf' is not supported: the CBF constraint needs a spline transcription");
  }
  return m;
}

struct BenchmarkConfig {
  std::vector<std::filesystem::path> scenarios;
  std::vector<MethodSpec> methods;
  std::vector<int> regions = {3};  // swept for spline methods; DMS ignores it
  std::vector<double> horizons;   // empty keeps each scenario's own horizon
  int repetitions = 1;
  std::filesystem::path output_dir = "bench_out";
  int jobs = 1;
  bool write_run_logs = true;

  void validate() const {
    if (scenarios.empty()) throw DomainError("benchmark: at least one scenario is required");
    if (methods.empty()) throw DomainError("benchmark: at least one method is required");
    if (regions.empty()) throw DomainError("benchmark: region list must not be empty");
    for (int k : regions) {
      if (k < 1) throw DomainError("benchmark: regions must be positive");
    }
    for (double h : horizons) {
      if (!(h > 0.0)) throw DomainError("benchmark: horizons must be positive");
    }
    if (repetitions < 1) throw DomainError("benchmark: repetitions must be positive");
    if (jobs < 1) throw DomainError("benchmark: jobs must be positive");
  }
};

/// Scenario paths are resolved against the config file's directory.
inline BenchmarkConfig parse_benchmark_text(const std::string& text, const std::filesystem::path& base_dir,
                                            const std::string& source = "<benchmark>") {
  using detail::Reader;
  const YAML::Node root = detail::load_document(text, source);
  const Reader rd(source);
  rd.check_keys(root, {"schema", "scenarios", "methods", "regions", "horizons", "repetitions", "output", "jobs",
                       "write_run_logs"},
                "");
  BenchmarkConfig cfg;
  auto list = [&](const char* key) {
    const YAML::Node n = root[key];
    if (n && !n.IsSequence()) rd.fail(n, key, "expected a list");
    return n;
  };
  if (const YAML::Node n = list("scenarios")) {
    for (std::size_t i = 0; i < n.size(); ++i) {
      std::filesystem::path p = rd.convert<std::string>(n[i], "scenarios[" + std::to_string(i) + "]");
      cfg.scenarios.push_back(p.is_absolute() ? p : base_dir / p);
    }
  }
  if (const YAML::Node n = list("methods")) {
    for (std::size_t i = 0; i < n.size(); ++i) {
      const std::string field = "methods[" + std::to_string(i) + "]";
      try {
        cfg.methods.push_back(parse_method_spec(rd.convert<std::string>(n[i], field)));
      } catch (const ScenarioError&) {
        throw;
      } catch (const DomainError& e) {
        rd.fail(n[i], field, e.what());
      }
    }
  }
  if (const YAML::Node n = list("regions")) {
    cfg.regions.clear();
    for (std::size_t i = 0; i < n.size(); ++i) cfg.regions.push_back(rd.convert<int>(n[i], "regions"));
  }
  if (const YAML::Node n = list("horizons")) {
    for (std::size_t i = 0; i < n.size(); ++i) cfg.horizons.push_back(rd.convert<double>(n[i], "horizons"));
  }
  cfg.repetitions = rd.get<int>(root, "repetitions", cfg.repetitions, "");
  cfg.jobs = rd.get<int>(root, "jobs", cfg.jobs, "");
  cfg.write_run_logs = rd.get<bool>(root, "write_run_logs", cfg.write_run_logs, "");
  const std::string out = rd.get<std::string>(root, "output", cfg.output_dir.string(), "");
  cfg.output_dir = std::filesystem::path(out).is_absolute() ? std::filesystem::path(out) : base_dir / out;
  try {
    cfg.validate();
  } catch (const DomainError& e) {
    rd.fail(root, "benchmark", e.what());
  }
  return cfg;
}

inline BenchmarkConfig parse_benchmark(const std::filesystem::path& file) {
  return parse_benchmark_text(detail::read_file(file), file.parent_path(), file.string());
}

/// Identity of one closed-loop run inside a benchmark.
struct RunKey {
  std::string scenario;
  MethodSpec method;
  int regions = 0;
  double horizon = 0.0;
  int repetition = 0;
  std::uint64_t seed = 0;
};

struct RunResult {
  RunKey key;
  sim::ClosedLoopLog log;
  std::string error;  // non-empty when the run could not be executed
};

/// Aggregate over all runs sharing (method, K, horizon).
struct SummaryRow {
  std::string method;
  int regions = 0;
  double horizon = 0.0;
  int runs = 0;
  int cycles = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;
  int detection_cycles = 0;
  int crash_cycles = 0;
  double crash_avoidance = 100.0;  // pooled over detection cycles
  int solver_failures = 0;
  int aborted_runs = 0;
  int num_primal = 0;
  int num_variables = 0;

  [[nodiscard]] double crash_percentage() const { return 100.0 - crash_avoidance; }
};

struct BenchmarkResult {
  std::vector<RunResult> runs;
  std::vector<SummaryRow> summary;
};

/// Nearest-rank percentile of an unsorted sample; 0 for an empty sample.
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double rank = std::ceil(p / 100.0 * static_cast<double>(v.size()));
  const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(v.size()))) - 1;
  return v[idx];
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs) {
  std::vector<SummaryRow> rows;
  std::vector<std::vector<double>> times;
  for (const auto& r : runs) {
    const std::string label = r.key.method.label();
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& s) {
      return s.method == label && s.regions == r.key.regions && s.horizon == r.key.horizon;
    });
    if (it == rows.end()) {
      SummaryRow s;
      s.method = label;
      s.regions = r.key.regions;
      s.horizon = r.key.horizon;
      rows.push_back(s);
      times.emplace_back();
      it = rows.end() - 1;
    }
    const auto idx = static_cast<std::size_t>(it - rows.begin());
    SummaryRow& s = *it;
    ++s.runs;
    if (!r.error.empty()) {
      ++s.aborted_runs;
      continue;
    }
    if (r.log.aborted) ++s.aborted_runs;
    s.num_primal = std::max(s.num_primal, r.log.num_primal);
    s.num_variables = std::max(s.num_variables, r.log.num_variables);
    for (const auto& c : r.log.records) {
      ++s.cycles;
      times[idx].push_back(c.stats.wall_time_ms);
      if (c.solver_failed) ++s.solver_failures;
      if (c.detection) {
        ++s.detection_cycles;
        if (c.crash) ++s.crash_cycles;
      }
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    SummaryRow& s = rows[i];
    const auto& t = times[i];
    if (!t.empty()) {
      double sum = 0.0;
      for (double v : t) sum += v;
      s.mean_ms = sum / static_cast<double>(t.size());
      s.median_ms = median(t);
      s.p95_ms = percentile(t, 95.0);
      s.max_ms = *std::max_element(t.begin(), t.end());
    }
    s.crash_avoidance =
        s.detection_cycles == 0 ? 100.0 : 100.0 * (s.detection_cycles - s.crash_cycles) / s.detection_cycles;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV and table output

inline void write_log_csv(std::ostream& out, const sim::ClosedLoopLog& log) {
  using namespace vehicle;
  out << "time,s,w,heading_error,vx,vy,yaw_rate,steer,throttle,x,y,heading,steer_rate,throttle_rate,"
         "solve_ms,sqp_iterations,qp_iterations,max_violation,softened,solver_failed,detection,crash,h_min\n";
  out << std::setprecision(10);
  for (const auto& r : log.records) {
    double hmin = std::numeric_limits<double>::infinity();
    for (double h : r.h) {
      if (!std::isnan(h)) hmin = std::min(hmin, h);
    }
    out << r.time << ',' << r.x(kS) << ',' << r.x(kW) << ',' << r.x(kHeadingError) << ',' << r.x(kVx) << ','
        << r.x(kVy) << ',' << r.x(kYawRate) << ',' << r.x(kSteer) << ',' << r.x(kThrottle) << ',' << r.pose.x << ','
        << r.pose.y << ',' << r.pose.heading << ',' << r.u(kSteerRate) << ',' << r.u(kThrottleRate) << ','
        << r.stats.wall_time_ms << ',' << r.stats.iterations << ',' << r.stats.qp_iterations << ','
        << r.stats.max_violation << ',' << r.stats.softened << ',' << r.solver_failed << ',' << r.detection << ','
        << r.crash << ',';
    if (!std::isinf(hmin)) out << hmin;  // empty when no obstacle is present
    out << '\n';
  }
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "method,regions,horizon,runs,cycles,mean_ms,median_ms,p95_ms,max_ms,detection_cycles,crash_cycles,"
         "crash_avoidance_pct,crash_pct,solver_failures,aborted_runs,num_primal,num_variables\n";
  out << std::setprecision(10);
  for (const auto& s : rows) {
    out << s.method << ',' << s.regions << ',' << s.horizon << ',' << s.runs << ',' << s.cycles << ',' << s.mean_ms
        << ',' << s.median_ms << ',' << s.p95_ms << ',' << s.max_ms << ',' << s.detection_cycles << ','
        << s.crash_cycles << ',' << s.crash_avoidance << ',' << s.crash_percentage() << ',' << s.solver_failures
        << ',' << s.aborted_runs << ',' << s.num_primal << ',' << s.num_variables << '\n';
  }
}

inline void write_summary_table(std::ostream& out, const std::vector<SummaryRow>& rows) {
  std::ios saved(nullptr);
  saved.copyfmt(out);
  out << std::left << std::setw(16) << "method" << std::right << std::setw(4) << "K" << std::setw(7) << "t_f"
      << std::setw(6) << "runs" << std::setw(10) << "mean ms" << std::setw(10) << "med ms" << std::setw(10)
      << "p95 ms" << std::setw(9) << "crash %" << std::setw(7) << "fails" << std::setw(7) << "n_z" << '\n';
  out << std::fixed;
  for (const auto& s : rows) {
    out << std::left << std::setw(16) << s.method << std::right << std::setw(4) << s.regions << std::setw(7)
        << std::setprecision(2) << s.horizon << std::setw(6) << s.runs << std::setw(10) << s.mean_ms << std::setw(10)
        << s.median_ms << std::setw(10) << s.p95_ms << std::setw(9) << s.crash_percentage() << std::setw(7)
        << s.solver_failures << std::setw(7) << s.num_primal << '\n';
  }
  out.copyfmt(saved);
}

inline std::string run_file_name(const RunKey& k) {
  std::ostringstream n;
  n << k.scenario << "__" << k.method.label() << "__K" << k.regions << "__tf" << detail::format_number(k.horizon)
    << "__r" << k.repetition << ".csv";
  return n.str();
}

// ---------------------------------------------------------------------------
// Execution

/// Expands the matrix in deterministic order: scenario, method, K, horizon, repetition.
inline std::vector<std::pair<RunKey, sim::Scenario>> expand(const BenchmarkConfig& cfg,
                                                             const std::vector<sim::Scenario>& scenarios) {
  std::vector<std::pair<RunKey, sim::Scenario>> out;
  for (const auto& base : scenarios) {
    for (const auto& m : cfg.methods) {
      const std::vector<int> ks = m.method == transcription::Method::kDms ? std::vector<int>{0} : cfg.regions;
      const std::vector<double> hs = cfg.horizons.empty() ? std::vector<double>{base.horizon} : cfg.horizons;
      for (int k : ks) {
        for (double h : hs) {
          for (int rep = 0; rep < cfg.repetitions; ++rep) {
            sim::Scenario sc = base;
            sc.method = m.method;
            sc.cbf = m.cbf;
            if (k > 0) sc.regions = k;
            sc.horizon = h;
            sc.seed = base.seed + static_cast<std::uint64_t>(rep);
            out.push_back({RunKey{base.name, m, k, h, rep, sc.seed}, sc});
          }
        }
      }
    }
  }
  return out;
}

/// Runs every task on `jobs` worker threads; results keep task order.
inline std::vector<RunResult> run_tasks(const std::vector<std::pair<RunKey, sim::Scenario>>& tasks, int jobs) {
  std::vector<RunResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      results[i].key = tasks[i].first;
      try {
        results[i].log = sim::run_closed_loop(tasks[i].second);
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return results;
}

/// Runs the benchmark matrix and writes per-run CSVs plus summary.csv under the output directory.
inline BenchmarkResult run_benchmark(const BenchmarkConfig& cfg) {
  cfg.validate();
  std::vector<sim::Scenario> scenarios;
  for (const auto& p : cfg.scenarios) scenarios.push_back(parse_scenario(p));
  BenchmarkResult res;
  res.runs = run_tasks(expand(cfg, scenarios), cfg.jobs);
  res.summary = summarize(res.runs);

  std::filesystem::create_directories(cfg.output_dir);
  if (cfg.write_run_logs) {
    std::filesystem::create_directories(cfg.output_dir / "runs");
    for (const auto& r : res.runs) {
      if (!r.error.empty()) continue;
      std::ofstream f(cfg.output_dir / "runs" / run_file_name(r.key));
      write_log_csv(f, r.log);
    }
  }
  std::ofstream s(cfg.output_dir / "summary.csv");
  write_summary_csv(s, res.summary);
  std::ofstream fails(cfg.output_dir / "failures.csv");
  fails << "scenario,method,regions,horizon,repetition,error\n";
  for (const auto& r : res.runs) {
    const std::string why = !r.error.empty() ? r.error : (r.log.aborted ? r.log.abort_reason : "");
    if (why.empty()) continue;
    std::string quoted = why;
    std::replace(quoted.begin(), quoted.end(), '"', '\'');
    fails << r.key.scenario << ',' << r.key.method.label() << ',' << r.key.regions << ',' << r.key.horizon << ','
          << r.key.repetition << ",\"" << quoted << "\"\n";
  }
  return res;
}

}  // namespace resafe::harness
