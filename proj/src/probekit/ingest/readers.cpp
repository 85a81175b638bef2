#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include <nlohmann/json.hpp>

#include "probekit/error.hpp"
#include "probekit/ingest/corpus.hpp"

namespace probekit::ingest {
namespace {

struct Line {
  std::string_view text;
  std::size_t number;
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t start = 0;
  std::size_t number = 1;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back({line, number++});
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t'; });
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string_view> split_on(std::string_view s, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + sep.size();
  }
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

bool is_root_label(std::string_view label) { return label.empty() || label == "ROOT" || label == "TOP"; }

}  // namespace

void validate_sentence(const AnnotatedSentence& s, std::size_t sent_id) {
  const std::size_t n = s.size();
  auto fail = [sent_id](const std::string& what) {
    throw DataError("sentence " + std::to_string(sent_id) + ": " + what);
  };
  auto check_len = [&](const auto& field, const char* name) {
    if (field && field->size() != n) fail(std::string(name) + " length differs from token count");
  };
  check_len(s.upos, "upos");
  check_len(s.xpos, "xpos");
  check_len(s.dep_heads, "dep_heads");
  check_len(s.dep_labels, "dep_labels");
  check_len(s.bio, "bio");
  if (s.dep_heads) {
    for (std::size_t i = 0; i < n; ++i) {
      const int h = (*s.dep_heads)[i];
      if (h < 0 || static_cast<std::size_t>(h) > n) fail("head of token " + std::to_string(i + 1) + " out of range");
      if (static_cast<std::size_t>(h) == i + 1) fail("token " + std::to_string(i + 1) + " heads itself");
    }
  }
  if (s.semgraph) {
    for (const auto& a : *s.semgraph)
      if (a.head >= n || a.mod >= n) fail("semantic arc index out of range");
  }
  if (s.clusters) {
    std::set<std::size_t> seen;
    for (const auto& cluster : *s.clusters) {
      for (std::size_t idx : std::set<std::size_t>(cluster.begin(), cluster.end())) {
        if (idx >= n) fail("coreference mention index out of range");
        if (!seen.insert(idx).second) fail("token " + std::to_string(idx) + " belongs to two clusters");
      }
    }
  }
  if (s.sparse_targets) {
    for (const auto& t : *s.sparse_targets)
      if (t.index >= n) fail("sparse target index out of range");
  }
}

// ---------------------------------------------------------------------------

Corpus parse_conllu(std::string_view text) {
  Corpus corpus;
  AnnotatedSentence current;
  auto flush = [&] {
    if (!current.tokens.empty()) corpus.push_back(std::move(current));
    current = AnnotatedSentence{};
  };
  for (const auto& [line, number] : split_lines(text)) {
    if (is_blank(line)) {
      flush();
      continue;
    }
    if (line.front() == '#') continue;
    auto cols = line.find('\t') != std::string_view::npos ? split_on(line, "\t") : split_ws(line);
    if (cols.size() != 10)
      throw ParseError("CoNLL-U row has " + std::to_string(cols.size()) + " columns, expected 10", number);
    const std::string_view id = cols[0];
    if (id.find('-') != std::string_view::npos || id.find('.') != std::string_view::npos) continue;
    std::size_t idnum = 0;
    if (!parse_int(id, idnum)) throw ParseError("non-integer token id '" + std::string(id) + "'", number);
    int head = 0;
    if (!parse_int(cols[6], head)) throw ParseError("non-integer head '" + std::string(cols[6]) + "'", number);
    if (!current.upos) {
      current.upos.emplace();
      current.xpos.emplace();
      current.dep_heads.emplace();
      current.dep_labels.emplace();
    }
    current.tokens.emplace_back(cols[1]);
    current.upos->emplace_back(cols[3]);
    current.xpos->emplace_back(cols[4]);
    current.dep_heads->push_back(head);
    current.dep_labels->emplace_back(cols[7]);
  }
  flush();
  for (std::size_t i = 0; i < corpus.size(); ++i) validate_sentence(corpus[i], i);
  return corpus;
}

// ---------------------------------------------------------------------------
// Bracketed trees

namespace {

class TreeReader {
 public:
  explicit TreeReader(std::string_view text) : text_(text) {}

  bool at_end() {
    skip_ws();
    return pos_ >= text_.size();
  }

  TreeNode read_node() {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != '(') fail("expected '('");
    const std::size_t open = pos_++;
    TreeNode node;
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] != '(' && text_[pos_] != ')') node.label = read_atom();
    while (true) {
      skip_ws();
      if (pos_ >= text_.size()) {
        pos_ = open;
        fail("unbalanced parentheses: '(' is never closed");
      }
      const char c = text_[pos_];
      if (c == ')') {
        ++pos_;
        break;
      }
      if (c == '(') {
        node.children.push_back(read_node());
      } else {
        node.children.push_back(TreeNode{read_atom(), {}});
      }
    }
    return node;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("bracketed tree: " + what + " at character offset " + std::to_string(pos_));
  }

  void expect_open() {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == ')') fail("unbalanced parentheses: unexpected ')'");
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string read_atom() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '(' &&
           text_[pos_] != ')')
      ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

// Drops empty elements (-NONE- preterminals) and any nonterminal left without children.
bool prune_empty(TreeNode& node) {
  if (node.is_leaf()) return true;
  if (node.is_preterminal()) return node.label != "-NONE-";
  std::vector<TreeNode> kept;
  for (auto& c : node.children)
    if (prune_empty(c)) kept.push_back(std::move(c));
  node.children = std::move(kept);
  return !node.children.empty();
}

void collect_leaves(const TreeNode& node, AnnotatedSentence& s) {
  if (node.is_preterminal()) {
    s.tokens.push_back(node.children[0].label);
    s.xpos->push_back(node.label);
    return;
  }
  for (const auto& c : node.children) {
    if (c.is_leaf()) throw DataError("bracketed tree: word '" + c.label + "' has no part-of-speech node");
    collect_leaves(c, s);
  }
}

void print_node(const TreeNode& node, std::string& out) {
  if (node.is_leaf()) {
    out += node.label;
    return;
  }
  out += '(';
  out += node.label;
  for (const auto& c : node.children) {
    out += ' ';
    print_node(c, out);
  }
  out += ')';
}

}  // namespace

std::string print_tree(const TreeNode& tree) {
  std::string out;
  print_node(tree, out);
  return out;
}

Corpus parse_ptb_trees(std::string_view text) {
  Corpus corpus;
  TreeReader reader(text);
  while (true) {
    reader.expect_open();
    if (reader.at_end()) break;
    TreeNode node = reader.read_node();
    while (is_root_label(node.label) && node.children.size() == 1 && !node.children[0].is_leaf())
      node = TreeNode(std::move(node.children[0]));
    if (!prune_empty(node)) continue;
    AnnotatedSentence s;
    s.xpos.emplace();
    collect_leaves(node, s);
    s.tree = std::move(node);
    corpus.push_back(std::move(s));
  }
  return corpus;
}

std::vector<std::string> derive_ancestor_labels(const AnnotatedSentence& sentence, int degree) {
  if (!sentence.tree) throw DataError("ancestor labels need a constituency tree");
  if (degree < 1 || degree > 3) throw UsageError("ancestor degree must be 1, 2 or 3");
  const TreeNode* root = &*sentence.tree;
  while (is_root_label(root->label) && root->children.size() == 1 && !root->children[0].is_leaf())
    root = &root->children[0];

  std::vector<std::string> labels;
  std::vector<const TreeNode*> path;  // nonterminals from the root down to the current node
  auto visit = [&](auto&& self, const TreeNode& node) -> void {
    if (node.is_preterminal()) {
      // path.back() is the preterminal's parent.
      const auto d = static_cast<std::size_t>(degree);
      labels.emplace_back(path.size() >= d ? path[path.size() - d]->label : std::string(kNoneLabel));
      return;
    }
    path.push_back(&node);
    for (const auto& c : node.children) self(self, c);
    path.pop_back();
  };
  if (root->is_preterminal()) {
    labels.emplace_back(kNoneLabel);
  } else {
    visit(visit, *root);
  }
  return labels;
}

// ---------------------------------------------------------------------------

Corpus parse_conll_columns(std::string_view text, const ColumnSchema& schema) {
  Corpus corpus;
  AnnotatedSentence current;
  std::size_t width = 0;
  auto flush = [&] {
    if (!current.tokens.empty()) corpus.push_back(std::move(current));
    current = AnnotatedSentence{};
    width = 0;
  };
  for (const auto& [line, number] : split_lines(text)) {
    if (is_blank(line)) {
      flush();
      continue;
    }
    auto cols = schema.separator.empty() ? split_ws(line) : split_on(line, schema.separator);
    if (!cols.empty() && cols[0].starts_with("-DOCSTART-")) {
      flush();
      continue;
    }
    if (width == 0) width = cols.size();
    if (cols.size() != width)
      throw ParseError("ragged row: " + std::to_string(cols.size()) + " columns, sentence started with " +
                           std::to_string(width),
                       number);
    if (schema.token_col >= cols.size() || schema.label_col >= cols.size())
      throw ParseError("row has only " + std::to_string(cols.size()) + " columns", number);
    const std::string label(cols[schema.label_col]);
    if (schema.sparse) {
      if (!current.sparse_targets) current.sparse_targets.emplace();
      if (label != "_") current.sparse_targets->push_back({current.tokens.size(), label, std::nullopt});
    } else {
      if (!current.bio) current.bio.emplace();
      current.bio->push_back(label);
    }
    current.tokens.emplace_back(cols[schema.token_col]);
  }
  flush();
  return corpus;
}

// ---------------------------------------------------------------------------

Corpus parse_sdp(std::string_view text) {
  Corpus corpus;
  struct Row {
    std::vector<std::string_view> cols;
    std::size_t number;
  };
  std::vector<Row> rows;
  auto flush = [&] {
    if (rows.empty()) return;
    AnnotatedSentence s;
    s.semgraph.emplace();
    std::vector<std::size_t> preds;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& cols = rows[i].cols;
      if (cols.size() < 6) throw ParseError("SDP row needs at least 6 columns", rows[i].number);
      s.tokens.emplace_back(cols[1]);
      if (cols[5] == "+") preds.push_back(i);
    }
    const std::size_t width = rows[0].cols.size();
    std::size_t base = 0;
    if (width == 7 + preds.size()) {
      base = 7;
    } else if (width == 6 + preds.size()) {
      base = 6;
    } else {
      throw ParseError("SDP sentence has " + std::to_string(preds.size()) + " predicates but " +
                           std::to_string(width >= 7 ? width - 7 : 0) + " argument columns",
                       rows[0].number);
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& cols = rows[i].cols;
      if (cols.size() != width) throw ParseError("SDP argument-column count differs from predicate count", rows[i].number);
      for (std::size_t p = 0; p < preds.size(); ++p) {
        const auto cell = cols[base + p];
        if (cell != "_") s.semgraph->push_back({preds[p], i, std::string(cell)});
      }
    }
    std::sort(s.semgraph->begin(), s.semgraph->end());
    corpus.push_back(std::move(s));
    rows.clear();
  };
  for (const auto& [line, number] : split_lines(text)) {
    if (is_blank(line)) {
      flush();
      continue;
    }
    if (line.front() == '#') continue;
    rows.push_back({line.find('\t') != std::string_view::npos ? split_on(line, "\t") : split_ws(line), number});
  }
  flush();
  for (std::size_t i = 0; i < corpus.size(); ++i) validate_sentence(corpus[i], i);
  return corpus;
}

// ---------------------------------------------------------------------------

Corpus parse_coref_jsonl(std::string_view text) {
  using json = nlohmann::json;
  Corpus corpus;
  for (const auto& [line, number] : split_lines(text)) {
    if (is_blank(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), number);
    }
    AnnotatedSentence s;
    try {
      s.tokens = j.at("tokens").get<std::vector<std::string>>();
      s.clusters.emplace();
      for (const auto& cluster : j.at("clusters")) {
        std::set<std::size_t> members;
        for (const auto& mention : cluster) {
          if (mention.is_number_integer()) {
            members.insert(mention.get<std::size_t>());
          } else if (mention.is_array() && mention.size() == 2) {
            members.insert(mention[1].get<std::size_t>());
          } else {
            throw ParseError("mention must be an index or an inclusive [start, end] span", number);
          }
        }
        s.clusters->emplace_back(members.begin(), members.end());
      }
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed coreference record: ") + e.what(), number);
    }
    validate_sentence(s, corpus.size());
    corpus.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace probekit::ingest
