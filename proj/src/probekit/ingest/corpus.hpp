#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

namespace probekit::ingest {

/// Constituency tree node. Leaves carry the word in `label` and have no children.
struct TreeNode {
  std::string label;
  std::vector<TreeNode> children;

  bool is_leaf() const noexcept { return children.empty(); }
  bool is_preterminal() const noexcept { return children.size() == 1 && children[0].is_leaf(); }
};

struct SemArc {
  std::size_t head = 0;  // 0-based predicate token
  std::size_t mod = 0;   // 0-based argument token
  std::string label;
  auto operator<=>(const SemArc&) const = default;
};

/// Sparse annotation on one token: a class label or a real value.
struct SparseTarget {
  std::size_t index = 0;
  std::string label;
  std::optional<double> value;
};

struct AnnotatedSentence {
  std::vector<std::string> tokens;
  std::optional<std::vector<std::string>> upos;
  std::optional<std::vector<std::string>> xpos;
  std::optional<std::vector<int>> dep_heads;  // 1-based, 0 = root
  std::optional<std::vector<std::string>> dep_labels;
  std::optional<TreeNode> tree;
  std::optional<std::vector<SemArc>> semgraph;
  std::optional<std::vector<std::vector<std::size_t>>> clusters;
  std::optional<std::vector<std::string>> bio;
  std::optional<std::vector<SparseTarget>> sparse_targets;
  /// Split name given by the source ("train"/"dev"/"test"); empty when unknown.
  std::string split;

  std::size_t size() const noexcept { return tokens.size(); }
};

using Corpus = std::vector<AnnotatedSentence>;

/// Checks index-range, no-self-head, and cluster disjointness invariants.
/// Throws DataError naming `sent_id` on violation.
void validate_sentence(const AnnotatedSentence& s, std::size_t sent_id);

// ---------------------------------------------------------------------------
// Readers. All take the whole file text; line numbers in errors are 1-based.

Corpus parse_conllu(std::string_view text);

/// Bracketed trees, one or more per input. An anonymous outer wrapper "( ... )"
/// and a top-level ROOT/TOP node are removed.
Corpus parse_ptb_trees(std::string_view text);

/// Single-line bracketed rendering; parse_ptb_trees(print_tree(t)) reproduces t.
std::string print_tree(const TreeNode& tree);

struct ColumnSchema {
  std::size_t token_col = 0;
  std::size_t label_col = 1;
  /// Empty means "any run of spaces or tabs".
  std::string separator;
  /// When set, label cells other than "_" become sparse targets instead of bio.
  bool sparse = false;
};

Corpus parse_conll_columns(std::string_view text, const ColumnSchema& schema);

/// SemEval-2015 SDP: id, form, lemma, pos, top, pred, [frame], then one argument
/// column per predicate. Both the 2014 (7+) and 2015 (8+) layouts are accepted
/// by counting predicates.
Corpus parse_sdp(std::string_view text);

/// JSONL, one {"tokens": [...], "clusters": [[m, ...], ...]} per line. A mention
/// is a token index or an inclusive [start, end] span reduced to its final token.
Corpus parse_coref_jsonl(std::string_view text);

// ---------------------------------------------------------------------------

/// Ancestor label of each token: degree 1 = parent of the preterminal,
/// 2 = grandparent, 3 = great-grandparent. "None" when the ancestor does not exist.
std::vector<std::string> derive_ancestor_labels(const AnnotatedSentence& sentence, int degree);

inline constexpr std::string_view kNoneLabel = "None";

}  // namespace probekit::ingest
