#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "rbn/gaussian.hpp"
#include "rbn/linalg.hpp"

namespace rbn {

enum class VarKind { NonTerminal, Terminal };
enum class ModelKind { Discrete, Gaussian };

struct Domain {
  bool categorical = true;
  int size = 1;  // cardinality (categorical) or dimension (continuous)
};

struct TemplateVariable {
  std::string id;
  VarKind kind = VarKind::NonTerminal;
  Domain domain;
};

// Discrete transition kernel. Rows are indexed by the source value, columns
// by the joint target assignment in row-major order over the target list.
struct CategoricalKernel {
  Eigen::MatrixXd table;
};

// Continuous binary branching kernel: left child drawn around a cyclic shift
// of the parent, right child around the parent itself.
struct BranchKernel {
  Mat sigma_left;
  Mat sigma_right;
  bool transpositions = false;
  Vec weights;  // shift weights, size D; ignored unless transpositions
};

// Continuous emission kernel; optionally emits 1 + Poisson(lambda)
// observations per leaf instead of exactly one.
struct EmissionKernel {
  Mat sigma;
  bool multi = false;
  double lambda = 0.0;
};

struct Transition {
  std::string source;
  std::vector<std::string> targets;
  std::variant<CategoricalKernel, BranchKernel, EmissionKernel> kernel;
};

// Distribution over the outgoing transitions of one non-terminal variable.
// Rows: owner values (categorical owner) or a single row (continuous owner).
// Columns: the owner's transitions in model order.
struct StructuralDistribution {
  std::string owner;
  Eigen::MatrixXd table;
};

struct Prior {
  std::string variable;
  Eigen::VectorXd weights;  // categorical start distribution
  Vec mean;                 // continuous start distribution
  Mat cov;
};

struct RbnSpec {
  ModelKind kind = ModelKind::Discrete;
  std::vector<TemplateVariable> variables;
  std::vector<Transition> transitions;
  std::vector<StructuralDistribution> structural;
  Prior prior;
};

// Lookup tables over a spec; assumes ids are unique (validate_spec reports
// duplicates before any op builds one of these).
struct SpecIndex {
  std::map<std::string, int> variable;
  std::map<std::string, std::vector<int>> transitions_of;
  std::map<std::string, int> structural_of;
};
SpecIndex index_spec(const RbnSpec& spec);

struct Violation {
  std::string code;
  std::string message;
  std::string where;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_spec(const RbnSpec& spec);

// Throws Error(Validation) with the first violation if the spec is invalid.
void require_valid(const RbnSpec& spec);

// Concatenated value ranges of all categorical variables of one kind, used as
// the flat category space for parsing and grammar conversion.
struct CategoryIndex {
  std::vector<int> var_of;    // category -> variable index in spec.variables
  std::vector<int> value_of;  // category -> value within its variable
  std::map<std::string, int> offset;  // variable id -> first category
  int total = 0;

  int category(const std::string& var, int value) const {
    return offset.at(var) + value;
  }
};
CategoryIndex nonterminal_index(const RbnSpec& spec);
CategoryIndex terminal_index(const RbnSpec& spec);

// --- Chomsky-like normal form -----------------------------------------------

// True when every transition is either one terminal target or two
// non-terminal targets.
bool is_cnf(const RbnSpec& spec);

// Rewrites a discrete spec into normal form while preserving the distribution
// over terminal sequences: separates terminals out of mixed transitions,
// reduces arity via packing variables with deterministic unpack transitions,
// eliminates unary cycles by a truncated geometric construction, and
// marginalizes out remaining unary transitions. Continuous specs are already
// normal-form by construction and are returned unchanged.
RbnSpec to_cnf(const RbnSpec& spec);

// --- Context-free grammar bridge --------------------------------------------

struct PcfgRule {
  enum class Kind { Binary, Emit, Unary };  // Unary only from the start symbol
  Kind kind = Kind::Binary;
  std::string lhs;
  std::string rhs1;  // Binary: left nonterminal; Emit: terminal; Unary: nonterminal
  std::string rhs2;  // Binary: right nonterminal
  double weight = 0.0;
};

struct Pcfg {
  std::vector<std::string> nonterminals;
  std::vector<std::string> terminals;
  std::string start;
  std::vector<PcfgRule> rules;
};

// Folds a weighted CNF grammar into an equivalent one-variable spec: the rule
// weights, normalized per left-hand side, become the structural/transition
// probabilities. Unary rules are accepted only from the start symbol, and
// only if the start symbol never appears on a right-hand side; they then
// define the prior over the remaining nonterminals.
RbnSpec abstract_pcfg(const Pcfg& grammar);

// Expands a discrete normal-form spec into the equivalent grammar over the
// concatenated category spaces, adding a fresh start symbol whose unary rules
// carry the prior. Zero-weight rules are omitted.
Pcfg rbn_to_pcfg(const RbnSpec& spec);

// --- Trees and data ----------------------------------------------------------

struct TreeNode {
  int begin = 0;
  int end = 0;  // span [begin, end) over observation positions
  int tau = 0;  // shift applied on the edge from the parent (left children)
  std::vector<int> children;  // node indices; empty for leaves
  int category = -1;          // value within `variable` (discrete)
  std::string variable;       // template variable id (discrete)
  Vec value;                  // continuous value
};

struct Tree {
  int length = 0;
  int root = -1;
  std::vector<TreeNode> nodes;

  std::string bracketed() const;
};

struct Sequence {
  std::vector<Vec> obs;
  int size() const { return static_cast<int>(obs.size()); }
  // Discrete symbol at position i; requires a 1-entry integral observation.
  int symbol(int i) const;
};

struct Dataset {
  std::vector<Sequence> sequences;
};

// --- Sampling -----------------------------------------------------------------

// Deterministic random stream: fixed algorithms on top of a 64-bit engine so
// identical seeds give identical output across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();                               // [0, 1)
  double normal();                                // standard normal
  int categorical(const double* w, int n);        // weights summing to ~1
  int categorical(const Eigen::VectorXd& w) {
    return categorical(w.data(), static_cast<int>(w.size()));
  }
  int poisson(double lambda);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct SampleResult {
  Tree tree;
  Sequence sequence;
};

inline constexpr int kDefaultMaxNodes = 10000;

// Generates one derivation: start value from the prior, then repeated
// structural choice / transition application until only observations remain.
// Throws BudgetExceeded once more than max_nodes cells are created.
SampleResult sample(const RbnSpec& spec, Rng& rng, int max_nodes = kDefaultMaxNodes);
SampleResult sample(const RbnSpec& spec, std::uint64_t seed,
                    int max_nodes = kDefaultMaxNodes);

std::vector<SampleResult> sample_many(const RbnSpec& spec, int count,
                                      std::uint64_t seed,
                                      int max_nodes = kDefaultMaxNodes);

// Rejection-samples until the sequence length lands in [min_len, max_len].
// Attempts that blow the node budget count as rejections.
SampleResult sample_in_window(const RbnSpec& spec, Rng& rng, int min_len,
                              int max_len, int max_nodes = kDefaultMaxNodes,
                              int max_attempts = 100000);

// --- Serialization -------------------------------------------------------------

std::string model_to_json(const RbnSpec& spec);
RbnSpec model_from_json(const std::string& json);
void save_model(const RbnSpec& spec, const std::string& path);
RbnSpec load_model(const std::string& path);

std::string tree_to_json(const Tree& tree);
std::string trees_to_json(const std::vector<Tree>& trees);
Tree tree_from_json(const std::string& json);

// One observation per row (comma-separated columns), a blank line between
// sequences.
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(const std::string& csv);
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

// Shortest round-trip decimal rendering, shared by all text output so reruns
// are byte-identical.
std::string format_double(double v);

}  // namespace rbn
