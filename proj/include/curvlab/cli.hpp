#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "curvlab/curvature.hpp"
#include "curvlab/freegeom.hpp"
#include "curvlab/nilpotent.hpp"
#include "curvlab/oplab.hpp"
#include "curvlab/parse.hpp"
#include "json.hpp"

namespace curvlab::cli {

using json = nlohmann::json;

inline constexpr const char* kToolName = "curvlab";
inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kBudgetEnv = "CURVLAB_BUDGET";

enum ExitCode { kComplete = 0, kError = 1, kInconclusive = 2 };

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------------------------
// Family specifications
//
//   # comment
//   n = 2
//   k = 1
//   base = 0 0            (optional, rationals; defaults to the origin)
//   gamma1 = x1 + t1
//   gamma2 = x2 + t1^2
//   weights = 1 inf       (optional)
//   order = 3             (optional check budgets: order, iterates, budget)

struct FamilySpec {
  int n = 0, k = 0;
  std::vector<Rational> base;
  std::vector<std::string> components;  // canonical polynomial text
  std::optional<std::vector<Weight>> weights;
  std::map<std::string, int> budgets;

  bool operator==(const FamilySpec& o) const {
    return n == o.n && k == o.k && base == o.base && components == o.components && weights == o.weights &&
           budgets == o.budgets;
  }

  GammaFamily family(int order) const { return GammaFamily::from_strings(n, k, components, base, order); }
};

inline std::string rational_str(const Rational& q) { return q.get_str(); }

// Canonical text of a polynomial: terms in the jet's monomial order, unit coefficients omitted.
inline std::string format_polynomial(const RJet& p) {
  if (p.terms().empty()) return "0";
  std::string out;
  const auto& names = p.context()->names;
  for (const auto& [a, c] : p.terms()) {
    bool neg = sgn(c) < 0;
    Rational mag = neg ? Rational(-c) : c;
    if (out.empty())
      out += neg ? "-" : "";
    else
      out += neg ? " - " : " + ";
    std::string mono;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.exps[i] == 0) continue;
      if (!mono.empty()) mono += "*";
      mono += names[i];
      if (a.exps[i] > 1) mono += "^" + std::to_string(a.exps[i]);
    }
    if (mono.empty())
      out += rational_str(mag);
    else if (mag == 1)
      out += mono;
    else
      out += rational_str(mag) + "*" + mono;
  }
  return out;
}

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

struct Token {
  std::string text;
  int col;
};

inline std::vector<Token> split_list(const std::string& s, int col0) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (is_space(s[i]) || s[i] == ',')) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_space(s[i]) && s[i] != ',') ++i;
    if (i > start) out.push_back({s.substr(start, i - start), col0 + static_cast<int>(start)});
  }
  return out;
}

inline int parse_count(const Token& t, int line) {
  if (t.text.empty() || t.text.size() > 6 || !std::all_of(t.text.begin(), t.text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw ParseError("expected a nonnegative integer, got '" + t.text + "'", line, t.col);
  return std::stoi(t.text);
}

inline Rational parse_rational_token(const Token& t, int line) {
  std::string s = t.text;
  std::size_t i = (s.size() && s[0] == '-') ? 1 : 0;
  std::size_t slash = s.find('/');
  auto digits = [&](std::size_t a, std::size_t b) {
    if (a >= b) return false;
    for (std::size_t j = a; j < b; ++j)
      if (!std::isdigit(static_cast<unsigned char>(s[j]))) return false;
    return true;
  };
  bool ok = slash == std::string::npos ? digits(i, s.size()) : digits(i, slash) && digits(slash + 1, s.size());
  Rational q;
  if (!ok || q.set_str(s, 10) != 0 || sgn(q.get_den()) == 0)
    throw ParseError("invalid rational literal '" + s + "'", line, t.col);
  q.canonicalize();
  return q;
}

}  // namespace detail

inline FamilySpec parse_spec(const std::string& text) {
  using detail::Token;
  struct Entry {
    std::string value;
    int line = 0, col = 0;
  };
  std::optional<Entry> n_e, k_e, base_e, weights_e;
  std::map<int, Entry> comps;
  FamilySpec s;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string l = raw.substr(0, raw.find('#'));
    std::size_t first = 0;
    while (first < l.size() && detail::is_space(l[first])) ++first;
    if (first == l.size()) continue;
    std::size_t eq = l.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line, static_cast<int>(first) + 1);
    std::string key = l.substr(first, eq - first);
    while (!key.empty() && detail::is_space(key.back())) key.pop_back();
    std::size_t vstart = eq + 1;
    while (vstart < l.size() && detail::is_space(l[vstart])) ++vstart;
    std::string value = l.substr(std::min(vstart, l.size()));
    while (!value.empty() && detail::is_space(value.back())) value.pop_back();
    Entry e{value, line, static_cast<int>(vstart) + 1};
    int kcol = static_cast<int>(first) + 1;
    if (value.empty()) throw ParseError("missing value for '" + key + "'", line, e.col);
    auto once = [&](std::optional<Entry>& slot) {
      if (slot) throw ParseError("duplicate key '" + key + "'", line, kcol);
      slot = e;
    };
    if (key == "n") {
      once(n_e);
    } else if (key == "k") {
      once(k_e);
    } else if (key == "base") {
      once(base_e);
    } else if (key == "weights") {
      once(weights_e);
    } else if (key == "order" || key == "iterates" || key == "budget") {
      if (s.budgets.count(key)) throw ParseError("duplicate key '" + key + "'", line, kcol);
      auto toks = detail::split_list(value, e.col);
      if (toks.size() != 1) throw ParseError("expected one integer", line, e.col);
      s.budgets[key] = detail::parse_count(toks[0], line);
    } else if (key.size() > 5 && key.rfind("gamma", 0) == 0 &&
               std::all_of(key.begin() + 5, key.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      int j = detail::parse_count({key.substr(5), kcol + 5}, line);
      if (j < 1) throw ParseError("components are numbered from 1", line, kcol + 5);
      if (comps.count(j)) throw ParseError("duplicate key '" + key + "'", line, kcol);
      comps[j] = e;
    } else {
      throw ParseError("unknown key '" + key + "'", line, kcol);
    }
  }
  int end_line = line + 1;
  auto single = [&](const std::optional<Entry>& e, const std::string& what) {
    if (!e) throw ParseError("missing '" + what + "'", end_line, 1);
    auto toks = detail::split_list(e->value, e->col);
    if (toks.size() != 1) throw ParseError("expected one integer", e->line, e->col);
    int v = detail::parse_count(toks[0], e->line);
    if (v < 1) throw ParseError("'" + what + "' must be at least 1", e->line, e->col);
    return v;
  };
  s.n = single(n_e, "n");
  s.k = single(k_e, "k");
  if (base_e) {
    for (const auto& t : detail::split_list(base_e->value, base_e->col)) s.base.push_back(detail::parse_rational_token(t, base_e->line));
    if (static_cast<int>(s.base.size()) != s.n)
      throw ParseError("base point needs " + std::to_string(s.n) + " coordinates", base_e->line, base_e->col);
  } else {
    s.base.assign(static_cast<std::size_t>(s.n), Rational(0));
  }
  if (weights_e) {
    std::vector<Weight> w;
    for (const auto& t : detail::split_list(weights_e->value, weights_e->col))
      w.push_back(t.text == "inf" ? Weight::infinity() : Weight(detail::parse_count(t, weights_e->line)));
    if (static_cast<int>(w.size()) != s.n)
      throw ParseError("weights need " + std::to_string(s.n) + " entries", weights_e->line, weights_e->col);
    s.weights = std::move(w);
  }
  for (const auto& [j, e] : comps)
    if (j > s.n) throw ParseError("component gamma" + std::to_string(j) + " exceeds n", e.line, 1);
  auto names = family_names(s.n, s.k);
  for (int j = 1; j <= s.n; ++j) {
    auto it = comps.find(j);
    if (it == comps.end()) throw ParseError("missing component 'gamma" + std::to_string(j) + "'", end_line, 1);
    const auto& e = it->second;
    long deg = std::max(1L, polynomial_degree_bound(e.value, names, e.line, e.col));
    if (deg > 64) throw ParseError("polynomial degree too large", e.line, e.col);
    auto ctx = make_context(names, static_cast<int>(deg));
    RJet p = PolyParser(e.value, ctx, e.line, e.col).parse();
    RJet rest = p - RJet::variable(ctx, static_cast<std::size_t>(j - 1));
    for (const auto& [a, c] : rest.terms()) {
      bool t_free = true;
      for (int i = s.n; i < s.n + s.k; ++i) t_free = t_free && a.exps[static_cast<std::size_t>(i)] == 0;
      if (t_free)
        throw ParseError("gamma" + std::to_string(j) + " does not reduce to x" + std::to_string(j) + " at t = 0", e.line,
                         e.col);
    }
    s.components.push_back(format_polynomial(p));
  }
  return s;
}

inline std::string pretty_print(const FamilySpec& s) {
  std::ostringstream os;
  os << "n = " << s.n << "\n";
  os << "k = " << s.k << "\n";
  os << "base =";
  for (const auto& b : s.base) os << " " << rational_str(b);
  os << "\n";
  for (std::size_t j = 0; j < s.components.size(); ++j) os << "gamma" << j + 1 << " = " << s.components[j] << "\n";
  if (s.weights) {
    os << "weights =";
    for (const auto& w : *s.weights) os << " " << w.str();
    os << "\n";
  }
  for (const auto& [key, v] : s.budgets) os << key << " = " << v << "\n";
  return os.str();
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw CliError("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Reports

struct Report {
  std::string command;
  json inputs;   // canonical inputs the digest is taken over
  json result;
  bool inconclusive = false;

  json to_json() const {
    json j;
    j["tool"] = kToolName;
    j["version"] = kVersion;
    j["command"] = command;
    j["inputs"] = inputs;
    j["input_digest"] = sha256_hex(inputs.dump());
    j["status"] = inconclusive ? "inconclusive" : "complete";
    j["result"] = result;
    return j;
  }
  int exit_code() const { return inconclusive ? kInconclusive : kComplete; }
};

inline json spec_json(const FamilySpec& s) {
  json j;
  j["n"] = s.n;
  j["k"] = s.k;
  json base = json::array();
  for (const auto& b : s.base) base.push_back(rational_str(b));
  j["base"] = base;
  j["components"] = s.components;
  if (s.weights) {
    json w = json::array();
    for (const auto& x : *s.weights) w.push_back(x.str());
    j["weights"] = w;
  }
  return j;
}

inline json multiindex_json(const MultiIndex& a) { return a.exps; }

inline json verdict_json(const GammaFamily& g, const CurvatureVerdict& v) {
  json j;
  j["condition"] = condition_name(v.condition);
  j["outcome"] = v.outcome();
  j["curved"] = v.curved;
  j["order"] = v.order;
  j["budget"] = v.budget;
  j["rank"] = v.rank;
  j["saturated"] = v.saturated;
  json words = json::array();
  for (const auto& w : v.spanning_words) words.push_back(word_str(w, v.labels));
  j["spanning_words"] = words;
  if (v.witness) {
    j["witness"] = {{"r", v.witness->r},
                    {"xi", v.witness->xi},
                    {"beta", multiindex_json(v.witness->beta)},
                    {"value", rational_str(v.witness->value)}};
  }
  j["certificate_verified"] = v.curved && verify_certificate(g, v);
  return j;
}

inline json normal_form_json(const NormalFormResult& r) {
  json j;
  j["status"] = r.status_name();
  j["q"] = r.q;
  j["order"] = r.order;
  json w = json::array();
  for (const auto& x : r.weights) w.push_back(x.str());
  j["weights"] = w;
  json steps = json::array();
  for (const auto& s : r.steps) {
    json st;
    st["kind"] = s.kind == NormalFormStep::Kind::permute ? "permute" : s.kind == NormalFormStep::Kind::raise_q ? "raise_q" : "flatten";
    st["index"] = s.index + 1;
    if (s.kind == NormalFormStep::Kind::permute) st["other"] = s.other + 1;
    st["weight"] = s.weight.str();
    if (s.h) st["h"] = format_polynomial(*s.h);
    steps.push_back(st);
  }
  j["steps"] = steps;
  json man = json::array();
  for (const auto& m : r.manifold) man.push_back(format_polynomial(m));
  j["manifold"] = man;
  if (r.witness)
    j["witness"] = {{"r", r.witness->r},
                    {"xi", r.witness->xi},
                    {"beta", multiindex_json(r.witness->beta)},
                    {"value", rational_str(r.witness->value)}};
  j["note"] = r.note;
  return j;
}

struct CheckBudgets {
  int order = 3;      // m: representation order for C_g / C_Y
  int iterates = -1;  // r for C_J; n when negative
  int budget = 6;     // bracket length L, tau budget b and normal form order
};

// Resolution order: explicit flags, then the spec file, then the environment default budget,
// then the built-in defaults.
inline CheckBudgets resolve_budgets(const FamilySpec& s, std::optional<int> order, std::optional<int> iterates,
                                    std::optional<int> budget) {
  CheckBudgets b;
  if (const char* env = std::getenv(kBudgetEnv)) {
    try {
      std::size_t used = 0;
      int v = std::stoi(env, &used);
      if (used != std::string(env).size() || v < 1) throw std::invalid_argument(env);
      b.budget = v;
    } catch (const std::exception&) {
      throw CliError(std::string(kBudgetEnv) + " must be a positive integer");
    }
  }
  auto pick = [&](int& slot, const std::optional<int>& flag, const char* key) {
    if (flag)
      slot = *flag;
    else if (auto it = s.budgets.find(key); it != s.budgets.end())
      slot = it->second;
  };
  pick(b.order, order, "order");
  pick(b.iterates, iterates, "iterates");
  pick(b.budget, budget, "budget");
  if (b.iterates < 0) b.iterates = s.n;
  if (b.order < 1 || b.budget < 1 || b.iterates < 1) throw CliError("order, iterates and budget must be at least 1");
  return b;
}

inline Report run_check(const FamilySpec& s, const CheckBudgets& b) {
  Report rep;
  rep.command = "check";
  rep.inputs = {{"spec", spec_json(s)}, {"budgets", {{"order", b.order}, {"iterates", b.iterates}, {"budget", b.budget}}}};
  auto g = s.family(b.order + b.budget + 2);
  auto cg = check_Cg(g, b.order, b.budget);
  auto cy = check_CY(g, b.order, b.budget);
  auto cj = check_CJ(g, b.iterates, b.budget);
  auto nf = normal_form(g, b.budget);
  json r;
  r["Cg"] = verdict_json(g, cg);
  r["CY"] = verdict_json(g, cy);
  r["CJ"] = verdict_json(g, cj);
  r["normal_form"] = normal_form_json(nf);
  bool curved = cg.curved || cy.curved || cj.curved || nf.status == NormalFormResult::Status::cj_certified;
  r["curved"] = curved;
  r["verdict"] = curved ? "curved-certified" : "flat-to-order(" + std::to_string(b.budget) + ")";
  if (s.weights) {
    bool match = nf.weights.size() == s.weights->size();
    for (std::size_t i = 0; match && i < nf.weights.size(); ++i) match = nf.weights[i] == (*s.weights)[i];
    r["weights_match"] = match;
  }
  rep.result = r;
  rep.inconclusive = !curved;
  return rep;
}

inline Report run_nilpotent(int p, const std::vector<int>& degrees, int m) {
  Report rep;
  rep.command = "nilpotent";
  rep.inputs = {{"generators", p}, {"degrees", degrees}, {"order", m}};
  auto alg = build_free_nilpotent(p, degrees, m);
  json r;
  r["dim"] = alg.dim();
  r["homogeneous_dimension"] = alg.homogeneous_dimension();
  json basis = json::array();
  for (int i = 0; i < alg.dim(); ++i)
    basis.push_back({{"index", i + 1}, {"word", alg.word_str(i)}, {"degree", alg.degree(i)}, {"length", alg.word(i).length}});
  r["basis"] = basis;
  json consts = json::array();
  for (int i = 0; i < alg.dim(); ++i)
    for (int j = i + 1; j < alg.dim(); ++j)
      for (const auto& [k, c] : alg.structure_constants(i, j))
        consts.push_back({{"i", i + 1}, {"j", j + 1}, {"k", k + 1}, {"c", rational_str(c)}});
  r["structure_constants"] = consts;
  GroupLaw law(alg);
  json poly = json::array();
  for (const auto& q : law.polynomials()) poly.push_back(format_polynomial(q));
  r["group_law"] = poly;
  rep.result = r;
  return rep;
}

inline Report run_lift(const FamilySpec& s, int m) {
  Report rep;
  rep.command = "lift";
  rep.inputs = {{"spec", spec_json(s)}, {"order", m}};
  auto g = s.family(m + 1);
  auto lf = lift_family(g, m);
  const auto& f = lf.frame;
  auto chk = verify_lift(f);
  json r;
  r["n"] = f.n;
  r["d"] = f.d;
  r["m"] = f.m;
  r["degrees"] = f.degrees;
  r["homogeneous_dimension"] = f.algebra.homogeneous_dimension();
  json gens = json::array();
  for (const auto& a : lf.alphas) gens.push_back("X" + a.str());
  r["generators"] = gens;
  json piv = json::array();
  for (auto p : f.pivots) piv.push_back(f.algebra.word_str(static_cast<int>(p)));
  r["pivots"] = piv;
  json fields = json::array();
  for (const auto& x : f.lifted) {
    json comps = json::array();
    for (std::size_t k = 0; k < x.dim(); ++k) comps.push_back(format_polynomial(x[k]));
    fields.push_back(comps);
  }
  r["lifted_fields"] = fields;
  r["check"] = {{"projects", chk.projects},
                {"checked_order", chk.checked_order},
                {"unit_at_base", chk.unit_at_base},
                {"rank", chk.rank},
                {"constants_match", chk.constants_match},
                {"brackets_checked", chk.brackets_checked}};
  rep.result = r;
  rep.inconclusive = !chk.ok();
  return rep;
}

// ---------------------------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  int grid = 0;                       // grid points per axis; 0 selects the experiment default
  std::uint64_t seed = 1;
  long budget = 0;                    // Monte Carlo samples; 0 selects the experiment default
  std::map<std::string, double> params;

  double param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
  int iparam(const std::string& key, int fallback) const { return static_cast<int>(std::lround(param(key, fallback))); }
};

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;
  json to_json() const { return {{"columns", columns}, {"rows", rows}}; }
};

inline std::string csv(const json& table) {
  std::ostringstream os;
  const auto& cols = table.at("columns");
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i].get<std::string>();
  os << "\n";
  for (const auto& row : table.at("rows")) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ",";
      if (row[i].is_string())
        os << row[i].get<std::string>();
      else
        os << row[i].dump();
    }
    os << "\n";
  }
  return os.str();
}

inline std::vector<std::string> experiment_names() {
  return {"ball-volume", "mollifier", "orthogonality", "pushforward", "smoothing", "vdc"};
}

namespace detail {

inline void unknown_params(const ExperimentConfig& c, const std::vector<std::string>& known) {
  for (const auto& [k, v] : c.params)
    if (std::find(known.begin(), known.end(), k) == known.end()) throw CliError("unknown experiment parameter '" + k + "'");
}

inline json ball_volume(const ExperimentConfig& c, Table& t) {
  unknown_params(c, {"generators", "m", "rmin", "points"});
  int p = c.iparam("generators", 2), m = c.iparam("m", 2), pts = c.iparam("points", 9);
  double rmin = c.param("rmin", 1.0 / 16);
  long samples = c.budget > 0 ? c.budget : 1000000;
  if (pts < 2 || !(rmin > 0 && rmin < 1)) throw CliError("ball-volume needs points >= 2 and 0 < rmin < 1");
  auto alg = build_free_nilpotent(p, std::vector<int>(static_cast<std::size_t>(p), 1), m);
  t.columns = {"r", "volume"};
  std::vector<double> lr, lv;
  for (double r : log_schedule(rmin, 1.0, pts)) {
    double v = ball_volume_mc(alg, r, static_cast<std::size_t>(samples), c.seed);
    t.rows.push_back({r, v});
    lr.push_back(std::log(r));
    lv.push_back(std::log(v));
  }
  double slope = least_squares(lr, lv).slope;
  int q = alg.homogeneous_dimension();
  return {{"dim", alg.dim()}, {"Q", q}, {"exponent", slope}, {"relative_error", std::fabs(slope - q) / q}, {"samples", samples}};
}

inline json vdc(const ExperimentConfig& c, Table& t) {
  unknown_params(c, {"lmin", "lmax", "points", "max_power"});
  double lo = c.param("lmin", 1e2), hi = c.param("lmax", 1e5);
  int pts = c.iparam("points", 13), maxp = c.iparam("max_power", 3);
  if (!(lo > 0 && hi > lo) || pts < 2 || maxp < 1) throw CliError("vdc needs 0 < lmin < lmax, points >= 2, max_power >= 1");
  auto sched = log_schedule(lo, hi, pts);
  t.columns = {"power", "lambda", "abs", "envelope"};
  json ex = json::object();
  bool trivial = true;
  for (int p = 1; p <= maxp; ++p) {
    auto r = vdc_decay([p](double x) { return std::pow(x, p); }, p, sched);
    for (const auto& row : r.rows) t.rows.push_back({p, row.lambda, row.abs_value, row.envelope});
    ex[std::to_string(p)] = {{"exponent", r.exponent}, {"expected", -1.0 / p}};
    trivial = trivial && r.trivial_bound_holds;
  }
  return {{"exponents", ex}, {"trivial_bound_holds", trivial}};
}

inline json pushforward(const ExperimentConfig& c, Table& t) {
  unknown_params(c, {"power", "bins"});
  int p = c.iparam("power", 2), bins = c.iparam("bins", 256);
  long samples = c.budget > 0 ? c.budget : 1000000;
  if (p < 1 || bins < 2) throw CliError("pushforward needs power >= 1 and bins >= 2");
  // tau uniform on [-1, 1]: the image of tau^p has density (2 / p) y^{1/p - 1} on [0, 1] for even p and
  // (1 / p) |y|^{1/p - 1} on [-1, 1] for odd p.
  bool even = p % 2 == 0;
  double lo = even ? 0.0 : -1.0;
  auto r = pushforward_density([p](const Point& x) { return Point{std::pow(x[0], p)}; }, 1, [](const Point&) { return 1.0; },
                               {lo}, {1.0}, bins, static_cast<std::size_t>(samples), c.seed);
  auto mass = [&](double a, double b) {
    auto cdf = [&](double y) { return (y < 0 ? -1.0 : 1.0) * std::pow(std::fabs(y), 1.0 / p); };
    return (even ? 2.0 : 1.0) * (cdf(b) - cdf(a));
  };
  double err = histogram_l1_error(r.hist, mass) / 2.0;
  t.columns = {"y_lo", "y_hi", "density", "reference"};
  for (int b = 0; b < bins; ++b) {
    double a = r.hist.lo[0] + b * r.hist.bin_width(0), e = a + r.hist.bin_width(0);
    t.rows.push_back({a, e, r.hist.density[static_cast<std::size_t>(b)], mass(a, e) / r.hist.bin_width(0)});
  }
  json mod = json::array();
  for (std::size_t i = 0; i < r.shifts.size(); ++i) mod.push_back({{"shift_bins", r.shifts[i]}, {"modulus", r.modulus[i]}});
  return {{"l1_error", err}, {"modulus_exponent", r.modulus_exponent}, {"modulus", mod}, {"outside", r.outside}, {"samples", samples}};
}

inline json orthogonality(const ExperimentConfig& c, Table& t) {
  unknown_params(c, {"jmin", "jmax", "interp"});
  int pts = c.grid > 0 ? c.grid : 256;
  int jmin = c.iparam("jmin", 0), jmax = c.iparam("jmax", 6);
  if (jmax - jmin < 3) throw CliError("orthogonality needs jmax - jmin >= 3");
  auto g = make_grid(2, 4.0, pts);
  OpOptions o;
  o.interp_order = c.iparam("interp", 3);
  auto d = orthogonality_decay(g, parabola_family(), hilbert_kernel(0.5), radial_cutoff(0.4), jmin, jmax, o, c.seed);
  t.columns = {"i", "j", "norm_Ti_Tj_star", "norm_Ti_star_Tj"};
  for (const auto& e : d.entries) t.rows.push_back({e.i, e.j, e.ti_tj_star, e.ti_star_tj});
  bool decreasing = true;
  for (std::size_t k = 3; k < d.by_gap.size(); ++k) decreasing = decreasing && d.by_gap[k] < d.by_gap[k - 1];
  return {{"grid", pts},
          {"by_gap", d.by_gap},
          {"epsilon", d.epsilon},
          {"decreasing_from_gap_2", decreasing},
          {"diag_ratio", d.diag_ratio},
          {"under_resolved", d.under_resolved}};
}

inline json mollifier(const ExperimentConfig& c, Table& t) {
  unknown_params(c, {"center", "radius", "chi", "jmin", "jmax"});
  int pts = c.grid > 0 ? c.grid : 4096;
  auto g = make_grid(1, 4.0, pts);
  MollifierOptions mo;
  mo.phi = Mollifier{{c.param("center", 0.25)}, c.param("radius", 0.5)};
  mo.chi0 = radial_cutoff(c.param("chi", 0.5));
  auto cal = mollifier_calibration(g, c.iparam("jmin", 0), c.iparam("jmax", 6), mo);
  t.columns = {"j", "defect", "r_row_sum"};
  for (const auto& r : cal.rows) t.rows.push_back({r.j, r.defect, r.r_row_sum});
  return {{"grid", pts}, {"slope", cal.slope}, {"center", mo.phi.center[0]}};
}

inline json smoothing(const ExperimentConfig& c, Table& t) {
  unknown_params(c, {"N", "s", "s_curved", "points"});
  int pts = c.grid > 0 ? c.grid : 256;
  int N = c.iparam("N", 3), count = c.iparam("points", 5);
  double s = c.param("s", 0.5), sc = c.param("s_curved", 0.1);
  auto g = make_grid(2, 4.0, pts);
  OpOptions o;
  o.periodic = true;
  o.interp_order = 1;
  auto ks = smooth_density(1, 1.0);
  auto psi = radial_cutoff(0.5);
  double dmin = std::pow(2 * g.spacing(), 1.0 / N) * 1.01;
  auto flat = smoothing_probe(g, flat_line_family(), ks, psi, s, log_schedule(dmin, 2.5 * dmin, count), N, o);
  auto curved = smoothing_probe(g, parabola_family(), ks, psi, sc, log_schedule(0.1, 0.4, count), 1, o);
  t.columns = {"family", "delta", "ratio", "slab_ratio"};
  for (const auto& r : flat.rows) t.rows.push_back({"flat", r.delta, r.ratio, r.slab_ratio});
  for (const auto& r : curved.rows) t.rows.push_back({"curved", r.delta, r.ratio, r.slab_ratio});
  return {{"grid", pts},
          {"flat", {{"N", N}, {"s", s}, {"slope", flat.slope}, {"slab_slope", flat.slab_slope}, {"expected", 1 - N * s}}},
          {"curved", {{"s", sc}, {"max_over_min", curved.max_over_min}, {"slope", curved.slope}}}};
}

}  // namespace detail

inline Report run_experiment(const std::string& name, const ExperimentConfig& c) {
  Report rep;
  rep.command = "oplab";
  json params = json::object();
  for (const auto& [k, v] : c.params) params[k] = v;
  rep.inputs = {{"experiment", name}, {"grid", c.grid}, {"seed", c.seed}, {"budget", c.budget}, {"params", params}};
  Table t;
  json summary;
  if (name == "ball-volume")
    summary = detail::ball_volume(c, t);
  else if (name == "vdc")
    summary = detail::vdc(c, t);
  else if (name == "pushforward")
    summary = detail::pushforward(c, t);
  else if (name == "orthogonality")
    summary = detail::orthogonality(c, t);
  else if (name == "mollifier")
    summary = detail::mollifier(c, t);
  else if (name == "smoothing")
    summary = detail::smoothing(c, t);
  else
    throw CliError("unknown experiment '" + name + "'");
  rep.result = {{"summary", summary}, {"table", t.to_json()}};
  return rep;
}

}  // namespace curvlab::cli
