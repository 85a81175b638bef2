#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>

#include "probekit/error.hpp"
#include "probekit/ingest/corpus.hpp"
#include "probekit/ingest/dataset.hpp"

using namespace probekit;
using namespace probekit::ingest;

namespace {

const char* kTwoTokens =
    "# text = Jo left\n"
    "1\tJo\tJo\tPROPN\tNNP\t_\t2\tnsubj\t_\t_\n"
    "2\tleft\tleave\tVERB\tVBD\t_\t0\troot\t_\t_\n"
    "\n";

const char* kCatTree = "(S (NP (DT the) (NN cat)) (VP (VBD sat)))";

ParseError parse_error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e;
  }
  FAIL("expected ParseError");
  return ParseError("", 0);
}

}  // namespace

TEST_CASE("conllu") {
  const auto c = parse_conllu(kTwoTokens);
  REQUIRE(c.size() == 1);
  CHECK(c[0].tokens == std::vector<std::string>{"Jo", "left"});
  CHECK(*c[0].dep_heads == std::vector<int>{2, 0});
  CHECK(*c[0].dep_labels == std::vector<std::string>{"nsubj", "root"});
  CHECK(*c[0].xpos == std::vector<std::string>{"NNP", "VBD"});

  // Multiword-token and empty-node rows are not tokens.
  const auto mw = parse_conllu(
      "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n"
      "1\tdo\tdo\tAUX\tVBP\t_\t0\troot\t_\t_\n"
      "2\tn't\tnot\tPART\tRB\t_\t1\tadvmod\t_\t_\n"
      "2.1\tx\tx\tX\tX\t_\t_\t_\t_\t_\n");
  CHECK(mw[0].size() == 2);

  CHECK(parse_error_of([] { parse_conllu("1\tJo\tJo\tPROPN\tNNP\t_\tX\tnsubj\t_\t_\n"); }).line() == 1);
  CHECK(parse_error_of([] { parse_conllu("# c\n1\tJo\tJo\tPROPN\n"); }).line() == 2);
  CHECK_THROWS_AS(parse_conllu("1\tJo\tJo\tPROPN\tNNP\t_\t1\tnsubj\t_\t_\n"), DataError);  // self-head
}

TEST_CASE("ptb trees") {
  const auto c = parse_ptb_trees(kCatTree);
  REQUIRE(c.size() == 1);
  CHECK(c[0].tokens == std::vector<std::string>{"the", "cat", "sat"});
  CHECK(*c[0].xpos == std::vector<std::string>{"DT", "NN", "VBD"});

  const auto wrapped = parse_ptb_trees(std::string("(") + kCatTree + ")");
  CHECK(print_tree(*wrapped[0].tree) == print_tree(*c[0].tree));
  const auto rooted = parse_ptb_trees(std::string("(ROOT ") + kCatTree + ")");
  CHECK(print_tree(*rooted[0].tree) == print_tree(*c[0].tree));

  CHECK(derive_ancestor_labels(c[0], 1) == std::vector<std::string>{"NP", "NP", "VP"});
  CHECK(derive_ancestor_labels(c[0], 2) == std::vector<std::string>{"S", "S", "S"});
  CHECK(derive_ancestor_labels(c[0], 3) == std::vector<std::string>{"None", "None", "None"});

  try {
    parse_ptb_trees("(S (NP (DT the)");
    FAIL("expected error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("random trees survive print then parse") {
  std::mt19937_64 rng(17);
  const char* labels[] = {"S", "NP", "VP", "PP", "SBAR"};
  std::function<TreeNode(int)> gen = [&](int depth) {
    TreeNode n;
    n.label = labels[rng() % 5];
    const int kids = 1 + int(rng() % 3);
    for (int k = 0; k < kids; ++k) {
      if (depth > 2 || rng() % 3 == 0) {
        TreeNode pre{"NN", {TreeNode{"w" + std::to_string(rng() % 100), {}}}};
        n.children.push_back(pre);
      } else {
        n.children.push_back(gen(depth + 1));
      }
    }
    return n;
  };
  for (int i = 0; i < 50; ++i) {
    const TreeNode t = gen(0);
    const std::string once = print_tree(t);
    const auto parsed = parse_ptb_trees(once);
    REQUIRE(parsed.size() == 1);
    CHECK(print_tree(*parsed[0].tree) == once);
  }
}

TEST_CASE("column files") {
  const auto c = parse_conll_columns("-DOCSTART- -X- O\n\nHe PRP B-NP\nruns VBZ B-VP\n", ColumnSchema{0, 2, "", false});
  REQUIRE(c.size() == 1);
  CHECK(*c[0].bio == std::vector<std::string>{"B-NP", "B-VP"});
  CHECK(parse_error_of([] { parse_conll_columns("a b c\nd e\n", ColumnSchema{0, 1, "", false}); }).line() == 2);

  const auto sp = parse_conll_columns("I _\nsat _\non p.Locus\nit _\n", ColumnSchema{0, 1, "", true});
  REQUIRE(sp[0].sparse_targets->size() == 1);
  CHECK((*sp[0].sparse_targets)[0].index == 2);
}

TEST_CASE("sdp") {
  const auto one = parse_sdp(
      "#20001\n"
      "1\tdogs\tdog\tNNS\t-\t-\tn:x\tARG1\n"
      "2\tbark\tbark\tVBP\t+\t+\tv:x\t_\n"
      "\n");
  REQUIRE(one.size() == 1);
  REQUIRE(one[0].semgraph->size() == 1);
  CHECK((*one[0].semgraph)[0] == SemArc{1, 0, "ARG1"});

  const auto none = parse_sdp("1\ta\ta\tDT\t-\t-\t_\n2\tb\tb\tNN\t-\t-\t_\n");
  CHECK(none[0].semgraph->empty());

  // Three predicates but one argument column.
  CHECK_THROWS_AS(parse_sdp("1\ta\ta\tDT\t-\t+\tf\t_\n2\tb\tb\tNN\t-\t+\tf\t_\n3\tc\tc\tNN\t-\t+\tf\t_\n"),
                  ParseError);
}

TEST_CASE("coref jsonl reduces spans to their final token") {
  const auto c = parse_coref_jsonl(R"({"tokens":["a","b","c","d"],"clusters":[[0,[2,3]],[1]]})");
  REQUIRE(c[0].clusters->size() == 2);
  CHECK((*c[0].clusters)[0] == std::vector<std::size_t>{0, 3});
  CHECK_THROWS_AS(parse_coref_jsonl(R"({"tokens":["a"],"clusters":[[0],[0]]})"), DataError);
  CHECK(parse_error_of([] { parse_coref_jsonl("\n{bad"); }).line() == 2);
}

TEST_CASE("token and sparse compilers") {
  const auto ds = compile_token_task(parse_ptb_trees(kCatTree), TokenTaskOptions{});
  CHECK(ds.instances.size() == 3);
  CHECK(ds.kind == TaskKind::token_labeling);

  const auto empty = compile_token_task(Corpus{}, TokenTaskOptions{});
  CHECK(empty.instances.empty());
  CHECK(empty.labels().empty());

  AnnotatedSentence s;
  s.tokens = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  s.sparse_targets = std::vector<SparseTarget>{{2, "p.Locus", {}}, {7, "p.Time", {}}};
  CHECK(compile_sparse_task({s}, SparseKind::classification).instances.size() == 2);

  AnnotatedSentence ef;
  ef.tokens = {"x", "y", "z", "w"};
  ef.sparse_targets = std::vector<SparseTarget>{{0, "3.0", 3.0}, {1, "-3.0", -3.0}, {2, "0.0", 0.0}};
  const auto reg = compile_sparse_task({ef}, SparseKind::regression);
  REQUIRE(reg.instances.size() == 3);
  CHECK(reg.instances[0].value == 3.0);
  CHECK(reg.instances[1].value == -3.0);

  AnnotatedSentence out_of_range = ef;
  out_of_range.sparse_targets = std::vector<SparseTarget>{{0, "4.5", 4.5}};
  const auto warned = compile_sparse_task({out_of_range}, SparseKind::regression);
  CHECK(warned.instances.size() == 1);
  CHECK(warned.metadata.contains("warnings"));

  AnnotatedSentence no_targets;
  no_targets.tokens = {"x"};
  CHECK(compile_sparse_task({no_targets}, SparseKind::classification).instances.empty());
}

TEST_CASE("arc classification") {
  const auto ds = compile_dep_arc_classification(parse_conllu(kTwoTokens), ArcSource::syntactic);
  REQUIRE(ds.instances.size() == 1);
  // Pair order is (head, mod): token 2 heads token 1.
  CHECK(ds.instances[0].head == 1);
  CHECK(ds.instances[0].pos == 0);
  CHECK(ds.instances[0].label == "nsubj");
}

TEST_CASE("arc prediction sampling") {
  SUBCASE("two-token sentence has no eligible negative") {
    const auto ds = compile_dep_arc_prediction(parse_conllu(kTwoTokens), ArcSource::syntactic, 1);
    CHECK(ds.instances.empty());
    CHECK(ds.metadata["dropped_positives"] == 1);
  }
  SUBCASE("five tokens are balanced and deterministic") {
    const char* five =
        "1\ta\ta\tX\tX\t_\t2\tx\t_\t_\n2\tb\tb\tX\tX\t_\t0\troot\t_\t_\n3\tc\tc\tX\tX\t_\t2\tx\t_\t_\n"
        "4\td\td\tX\tX\t_\t5\tx\t_\t_\n5\te\te\tX\tX\t_\t3\tx\t_\t_\n";
    const auto corpus = parse_conllu(five);
    const auto a = compile_dep_arc_prediction(corpus, ArcSource::syntactic, 7);
    const auto b = compile_dep_arc_prediction(corpus, ArcSource::syntactic, 7);
    std::size_t pos = 0, neg = 0;
    for (const auto& in : a.instances) (in.label == "1" ? pos : neg)++;
    CHECK(pos == 4);
    CHECK(neg == 4);
    REQUIRE(a.instances.size() == b.instances.size());
    for (std::size_t i = 0; i < a.instances.size(); ++i) CHECK(a.instances[i].head == b.instances[i].head);
    for (const auto& in : a.instances) {
      if (in.label != "0") continue;
      CHECK(int(in.head) + 1 != (*corpus[0].dep_heads)[in.pos]);
      CHECK(in.head != in.pos);
    }
  }
  SUBCASE("semantic negatives avoid every gold head of the modifier") {
    AnnotatedSentence s;
    s.tokens = {"a", "b", "c", "d"};
    s.semgraph = std::vector<SemArc>{{0, 3, "ARG1"}, {1, 3, "ARG2"}};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto ds = compile_dep_arc_prediction({s}, ArcSource::semantic, seed);
      for (const auto& in : ds.instances)
        if (in.label == "0") CHECK(in.head == 2);
    }
  }
}

TEST_CASE("coref arc prediction") {
  AnnotatedSentence one;
  one.tokens = {"a", "b", "c"};
  one.clusters = std::vector<std::vector<std::size_t>>{{0, 2}};
  CHECK(compile_coref_arc_prediction({one}, 1).instances.empty());

  AnnotatedSentence two;
  two.tokens = {"t0", "t1", "t2", "t3", "t4", "t5", "t6"};
  two.clusters = std::vector<std::vector<std::size_t>>{{1, 4}, {2, 6}};
  const auto ds = compile_coref_arc_prediction({two}, 3);
  std::set<std::pair<std::size_t, std::size_t>> positives;
  for (const auto& in : ds.instances) {
    if (in.label == "1") {
      positives.insert({in.head, in.pos});
    } else {
      CHECK(in.head < in.pos);
      const bool same = (in.head == 1 || in.head == 4) == (in.pos == 1 || in.pos == 4);
      CHECK_FALSE(same);
    }
  }
  CHECK(positives == std::set<std::pair<std::size_t, std::size_t>>{{1, 4}, {2, 6}});
  CHECK(ds.instances.size() == 4);
}

TEST_CASE("splits") {
  TaskDataset ds;
  for (std::size_t i = 0; i < 10; ++i) {
    ds.sentences.push_back({i, {"w"}, ""});
    ds.instances.push_back({i, 0, 0, i % 2 ? "A" : "B", 0.0});
  }
  split_dataset(ds, SplitPolicy{false, 1, 0.8, 0.1});
  CHECK(ds.count_in("train") == 8);
  CHECK(ds.count_in("dev") == 1);
  CHECK(ds.count_in("test") == 1);

  TaskDataset provided = ds;
  provided.sentences[0].split = "test";
  split_dataset(provided, SplitPolicy{});
  CHECK(provided.split_of(0) == "test");

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    TaskDataset r;
    const std::size_t n = 3 + rng() % 30;
    for (std::size_t i = 0; i < n; ++i) {
      r.sentences.push_back({i, {"a", "b"}, ""});
      r.instances.push_back({i, 0, 0, "X", 0.0});
      r.instances.push_back({i, 1, 0, "Y", 0.0});
    }
    split_dataset(r, SplitPolicy{false, rng(), 0.8, 0.1});
    std::map<std::size_t, std::set<std::string>> seen;
    for (const auto& in : r.instances) seen[in.sent_id].insert(r.split_of(in.sent_id));
    for (const auto& [sid, splits] : seen) CHECK(splits.size() == 1);
  }

  TaskDataset tiny;
  tiny.sentences.push_back({0, {"w"}, ""});
  tiny.instances.push_back({0, 0, 0, "A", 0.0});
  CHECK_THROWS_AS(split_dataset(tiny, SplitPolicy{false, 1, 0.5, 0.0}), DataError);
}

TEST_CASE("label vocabulary comes from train only") {
  TaskDataset ds;
  ds.sentences = {{0, {"a"}, "train"}, {1, {"b"}, "test"}};
  ds.instances = {{0, 0, 0, "NN", 0.0}, {1, 0, 0, "VB", 0.0}};
  ds.rebuild_vocab();
  CHECK(ds.labels() == std::vector<std::string>{"NN"});
  CHECK(ds.label_index("VB") == 1);  // reserved always-wrong id
}

TEST_CASE("dataset jsonl round-trip") {
  auto ds = compile_dep_arc_prediction(
      parse_conllu("1\ta\ta\tX\tX\t_\t2\tx\t_\t_\n2\tb\tb\tX\tX\t_\t0\troot\t_\t_\n3\tc\tc\tX\tX\t_\t2\tx\t_\t_\n\n"),
      ArcSource::syntactic, 4);
  split_dataset(ds, SplitPolicy{false, 1, 1.0, 0.0});
  const auto dir = std::filesystem::temp_directory_path() / "probekit_unit_ds";
  std::filesystem::create_directories(dir);
  save_dataset(ds, dir / "arc.jsonl");
  const auto back = load_dataset(dir / "arc.jsonl");
  CHECK(dataset_to_jsonl(back) == dataset_to_jsonl(ds));
  CHECK(back.labels() == ds.labels());
  CHECK(back.kind == TaskKind::pairwise_prediction);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir / "missing.jsonl"), IoError);
}
