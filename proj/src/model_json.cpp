#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rbn/model.hpp"

namespace rbn {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty())
    fail(ErrorCode::Validation, where + ": expected a non-empty array of rows");
  const size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) fail(ErrorCode::Validation, where + ": expected non-empty rows");
  Eigen::MatrixXd m(j.size(), cols);
  for (size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      fail(ErrorCode::Validation, where + ": ragged rows");
    for (size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number())
        fail(ErrorCode::Validation, where + ": non-numeric entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorCode::Validation, where + ": expected an array");
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(ErrorCode::Validation, where + ": non-numeric entry");
    v[i] = j[i].get<double>();
  }
  return v;
}

const json& member(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end())
    fail(ErrorCode::Validation, where + ": missing field '" + key + "'");
  return *it;
}

std::string string_member(const json& j, const char* key, const std::string& where) {
  const json& v = member(j, key, where);
  if (!v.is_string())
    fail(ErrorCode::Validation, where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::Io, "malformed JSON in " + what);
  return j;
}

json kernel_to_json(const Transition& t) {
  json k;
  if (const auto* c = std::get_if<CategoricalKernel>(&t.kernel)) {
    k["type"] = "categorical";
    k["table"] = matrix_to_json(c->table);
  } else if (const auto* b = std::get_if<BranchKernel>(&t.kernel)) {
    k["type"] = "branch";
    k["sigma_left"] = matrix_to_json(b->sigma_left);
    k["sigma_right"] = matrix_to_json(b->sigma_right);
    k["transpositions"] = b->transpositions;
    if (b->transpositions) k["weights"] = vector_to_json(b->weights);
  } else {
    const auto& e = std::get<EmissionKernel>(t.kernel);
    k["type"] = "emission";
    k["sigma"] = matrix_to_json(e.sigma);
    k["multi"] = e.multi;
    if (e.multi) k["lambda"] = e.lambda;
  }
  return k;
}

void kernel_from_json(const json& k, Transition& t, const std::string& where) {
  const std::string type = string_member(k, "type", where);
  if (type == "categorical") {
    CategoricalKernel c;
    c.table = matrix_from_json(member(k, "table", where), where + ".table");
    t.kernel = std::move(c);
  } else if (type == "branch") {
    BranchKernel b;
    b.sigma_left =
        matrix_from_json(member(k, "sigma_left", where), where + ".sigma_left");
    b.sigma_right =
        matrix_from_json(member(k, "sigma_right", where), where + ".sigma_right");
    if (k.contains("transpositions")) b.transpositions = k["transpositions"].get<bool>();
    if (b.transpositions)
      b.weights = vector_from_json(member(k, "weights", where), where + ".weights");
    t.kernel = std::move(b);
  } else if (type == "emission") {
    EmissionKernel e;
    e.sigma = matrix_from_json(member(k, "sigma", where), where + ".sigma");
    if (k.contains("multi")) e.multi = k["multi"].get<bool>();
    if (e.multi) e.lambda = member(k, "lambda", where).get<double>();
    t.kernel = std::move(e);
  } else {
    fail(ErrorCode::Validation, where + ": unknown kernel type '" + type + "'");
  }
}

// Flat columnar layout: one entry per node in `spans`, `transpositions`,
// `children`, and (discrete) `variables`/`categories` or (continuous)
// `values`. `bracketed` is a redundant rendering, ignored when reading.
json tree_to_json_value(const Tree& tree) {
  json j;
  j["length"] = tree.length;
  j["root"] = tree.root;
  json spans = json::array();
  json taus = json::array();
  json children = json::array();
  bool discrete = false;
  bool continuous = false;
  for (const auto& n : tree.nodes) {
    spans.push_back({n.begin, n.end});
    taus.push_back(n.tau);
    children.push_back(n.children);
    if (!n.variable.empty()) discrete = true;
    if (n.value.size() > 0) continuous = true;
  }
  j["spans"] = std::move(spans);
  j["transpositions"] = std::move(taus);
  j["children"] = std::move(children);
  if (discrete) {
    json vars = json::array();
    json cats = json::array();
    for (const auto& n : tree.nodes) {
      vars.push_back(n.variable);
      cats.push_back(n.category);
    }
    j["variables"] = std::move(vars);
    j["categories"] = std::move(cats);
  }
  if (continuous) {
    json values = json::array();
    for (const auto& n : tree.nodes) values.push_back(vector_to_json(n.value));
    j["values"] = std::move(values);
  }
  j["bracketed"] = tree.bracketed();
  return j;
}

Tree tree_from_json_value(const json& j) {
  Tree tree;
  tree.length = member(j, "length", "tree").get<int>();
  tree.root = member(j, "root", "tree").get<int>();
  const json& spans = member(j, "spans", "tree");
  const json& taus = member(j, "transpositions", "tree");
  const json& children = member(j, "children", "tree");
  const size_t count = spans.size();
  if (taus.size() != count || children.size() != count)
    fail(ErrorCode::Validation, "tree: per-node arrays disagree in length");
  if (tree.root >= static_cast<int>(count))
    fail(ErrorCode::Validation, "tree: root index out of range");
  tree.nodes.resize(count);
  for (size_t i = 0; i < count; ++i) {
    TreeNode& n = tree.nodes[i];
    if (!spans[i].is_array() || spans[i].size() != 2)
      fail(ErrorCode::Validation, "tree: each span must be a [begin, end] pair");
    n.begin = spans[i][0].get<int>();
    n.end = spans[i][1].get<int>();
    n.tau = taus[i].get<int>();
    for (const auto& c : children[i]) {
      const int idx = c.get<int>();
      if (idx < 0 || idx >= static_cast<int>(count))
        fail(ErrorCode::Validation, "tree: child index out of range");
      n.children.push_back(idx);
    }
  }
  if (j.contains("variables")) {
    const json& vars = j["variables"];
    const json& cats = member(j, "categories", "tree");
    if (vars.size() != count || cats.size() != count)
      fail(ErrorCode::Validation, "tree: per-node arrays disagree in length");
    for (size_t i = 0; i < count; ++i) {
      tree.nodes[i].variable = vars[i].get<std::string>();
      tree.nodes[i].category = cats[i].get<int>();
    }
  }
  if (j.contains("values")) {
    const json& values = j["values"];
    if (values.size() != count)
      fail(ErrorCode::Validation, "tree: per-node arrays disagree in length");
    for (size_t i = 0; i < count; ++i)
      tree.nodes[i].value = vector_from_json(values[i], "tree values");
  }
  return tree;
}

}  // namespace

std::string model_to_json(const RbnSpec& spec) {
  json j;
  j["kind"] = spec.kind == ModelKind::Discrete ? "discrete" : "gaussian";
  json vars = json::array();
  for (const auto& v : spec.variables) {
    json jv;
    jv["id"] = v.id;
    jv["kind"] = v.kind == VarKind::NonTerminal ? "nonterminal" : "terminal";
    if (v.domain.categorical)
      jv["domain"] = {{"type", "categorical"}, {"size", v.domain.size}};
    else
      jv["domain"] = {{"type", "continuous"}, {"size", v.domain.size}};
    vars.push_back(std::move(jv));
  }
  j["variables"] = std::move(vars);

  json trans = json::array();
  for (const auto& t : spec.transitions) {
    json jt;
    jt["source"] = t.source;
    jt["targets"] = t.targets;
    jt["kernel"] = kernel_to_json(t);
    trans.push_back(std::move(jt));
  }
  j["transitions"] = std::move(trans);

  json structural = json::array();
  for (const auto& s : spec.structural) {
    json js;
    js["owner"] = s.owner;
    js["table"] = matrix_to_json(s.table);
    structural.push_back(std::move(js));
  }
  j["structural"] = std::move(structural);

  json prior;
  prior["variable"] = spec.prior.variable;
  if (spec.prior.weights.size() > 0) prior["weights"] = vector_to_json(spec.prior.weights);
  if (spec.prior.mean.size() > 0) {
    prior["mean"] = vector_to_json(spec.prior.mean);
    prior["cov"] = matrix_to_json(spec.prior.cov);
  }
  j["prior"] = std::move(prior);
  return j.dump(2) + "\n";
}

RbnSpec model_from_json(const std::string& text) {
  const json j = parse_json(text, "model");
  RbnSpec spec;
  const std::string kind = string_member(j, "kind", "model");
  if (kind == "discrete")
    spec.kind = ModelKind::Discrete;
  else if (kind == "gaussian")
    spec.kind = ModelKind::Gaussian;
  else
    fail(ErrorCode::Validation, "model: unknown kind '" + kind + "'");

  for (const auto& jv : member(j, "variables", "model")) {
    TemplateVariable v;
    v.id = string_member(jv, "id", "variable");
    const std::string vk = string_member(jv, "kind", "variable " + v.id);
    if (vk == "nonterminal")
      v.kind = VarKind::NonTerminal;
    else if (vk == "terminal")
      v.kind = VarKind::Terminal;
    else
      fail(ErrorCode::Validation, "variable " + v.id + ": unknown kind '" + vk + "'");
    const json& dom = member(jv, "domain", "variable " + v.id);
    const std::string dt = string_member(dom, "type", "variable " + v.id + " domain");
    if (dt == "categorical")
      v.domain.categorical = true;
    else if (dt == "continuous")
      v.domain.categorical = false;
    else
      fail(ErrorCode::Validation,
           "variable " + v.id + ": unknown domain type '" + dt + "'");
    v.domain.size = member(dom, "size", "variable " + v.id + " domain").get<int>();
    spec.variables.push_back(std::move(v));
  }

  for (const auto& jt : member(j, "transitions", "model")) {
    Transition t;
    t.source = string_member(jt, "source", "transition");
    const std::string where = "transition from " + t.source;
    const json& targets = member(jt, "targets", where);
    if (!targets.is_array()) fail(ErrorCode::Validation, where + ": targets must be an array");
    for (const auto& tgt : targets) t.targets.push_back(tgt.get<std::string>());
    kernel_from_json(member(jt, "kernel", where), t, where + " kernel");
    spec.transitions.push_back(std::move(t));
  }

  for (const auto& js : member(j, "structural", "model")) {
    StructuralDistribution s;
    s.owner = string_member(js, "owner", "structural");
    s.table = matrix_from_json(member(js, "table", "structural " + s.owner),
                               "structural " + s.owner);
    spec.structural.push_back(std::move(s));
  }

  const json& prior = member(j, "prior", "model");
  spec.prior.variable = string_member(prior, "variable", "prior");
  if (prior.contains("weights"))
    spec.prior.weights = vector_from_json(prior["weights"], "prior weights");
  if (prior.contains("mean")) {
    spec.prior.mean = vector_from_json(prior["mean"], "prior mean");
    spec.prior.cov = matrix_from_json(member(prior, "cov", "prior"), "prior cov");
  }
  return spec;
}

void save_model(const RbnSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << model_to_json(spec);
  if (!out) fail(ErrorCode::Io, "write to '" + path + "' failed");
}

RbnSpec load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

std::string tree_to_json(const Tree& tree) {
  return tree_to_json_value(tree).dump(2) + "\n";
}

std::string trees_to_json(const std::vector<Tree>& trees) {
  json arr = json::array();
  for (const auto& t : trees) arr.push_back(tree_to_json_value(t));
  return arr.dump(2) + "\n";
}

Tree tree_from_json(const std::string& text) {
  return tree_from_json_value(parse_json(text, "tree"));
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out;
  bool first = true;
  for (const auto& seq : data.sequences) {
    if (!first) out += "\n";
    first = false;
    for (const auto& obs : seq.obs) {
      for (Eigen::Index d = 0; d < obs.size(); ++d) {
        if (d) out += ",";
        out += format_double(obs[d]);
      }
      out += "\n";
    }
  }
  return out;
}

Dataset dataset_from_csv(const std::string& csv) {
  Dataset data;
  Sequence current;
  size_t pos = 0;
  int line_no = 0;
  auto flush = [&] {
    if (!current.obs.empty()) {
      data.sequences.push_back(std::move(current));
      current = Sequence{};
    }
  };
  while (pos < csv.size()) {
    size_t eol = csv.find('\n', pos);
    if (eol == std::string::npos) eol = csv.size();
    std::string line = csv.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_no;
    pos = eol + 1;
    if (line.empty()) {
      flush();
      continue;
    }
    std::vector<double> values;
    size_t start = 0;
    while (true) {
      const size_t comma = line.find(',', start);
      const std::string cell =
          line.substr(start, comma == std::string::npos ? std::string::npos
                                                        : comma - start);
      double v = 0.0;
      const char* begin = cell.data();
      const char* end = begin + cell.size();
      while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
      while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
      const auto res = std::from_chars(begin, end, v);
      if (res.ec != std::errc() || res.ptr != end)
        fail(ErrorCode::Io,
             "line " + std::to_string(line_no) + ": cannot parse '" + cell + "'");
      values.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    Vec obs(values.size());
    for (size_t i = 0; i < values.size(); ++i) obs[static_cast<Eigen::Index>(i)] = values[i];
    if (!current.obs.empty() && current.obs.front().size() != obs.size())
      fail(ErrorCode::Io, "line " + std::to_string(line_no) +
                              ": inconsistent column count within a sequence");
    current.obs.push_back(std::move(obs));
  }
  flush();
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << dataset_to_csv(data);
  if (!out) fail(ErrorCode::Io, "write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_csv(buf.str());
}

}  // namespace rbn
