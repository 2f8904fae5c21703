#include <doctest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include "fedsc/errors.hpp"
#include "fedsc/evaluation.hpp"
#include "fedsc/federation.hpp"
#include "test_util.hpp"

using namespace fedsc;

namespace {

std::vector<std::string> words(std::initializer_list<const char*> w) { return {w.begin(), w.end()}; }

}  // namespace

TEST_CASE("build_vocab sums counts and keeps the most frequent") {
  const std::vector<WordCounts> counts{{{"a", 3}, {"b", 1}}, {{"b", 4}}};
  const auto v = build_vocab(counts, 2);
  REQUIRE(v.size() == 4u);
  CHECK(v.token(0) == "b");
  CHECK(v.token(1) == "a");
  CHECK(v.token(v.unk_index()) == kUnkToken);
  CHECK(v.token(v.pad_index()) == kPadToken);
  CHECK(v.unk_index() == 2);
  CHECK(v.pad_index() == 3);
}

TEST_CASE("build_vocab single token") {
  const std::vector<WordCounts> counts{{{"a", 1}}};
  const auto v = build_vocab(counts, 10);
  CHECK(v.size() == 3u);
  CHECK(v.contains("a"));
}

TEST_CASE("build_vocab breaks count ties lexicographically") {
  const std::vector<WordCounts> counts{{{"b", 2}, {"a", 2}}};
  const auto v = build_vocab(counts, 2);
  CHECK(v.token(0) == "a");
  CHECK(v.token(1) == "b");
  const auto v1 = build_vocab(counts, 2);
  CHECK(v1.tokens() == v.tokens());
}

TEST_CASE("build_vocab rejects empty input") {
  const std::vector<WordCounts> none{{}, {}};
  CHECK_THROWS_AS(build_vocab(none, 10), ConfigError);
  CHECK_THROWS_AS(build_vocab(std::span<const WordCounts>{}, 10), ConfigError);
}

TEST_CASE("lookup maps out-of-vocabulary tokens to unk") {
  const std::vector<WordCounts> counts{{{"good", 2}, {"movie", 1}}};
  const auto v = build_vocab(counts, 10);
  CHECK(v.lookup("good") == 0);
  CHECK(v.lookup("zzz_not_in_vocab") == v.unk_index());
  CHECK_FALSE(v.contains("zzz_not_in_vocab"));
}

TEST_CASE("encode pads, clips and handles empty and unknown input") {
  const std::vector<WordCounts> counts{{{"good", 2}, {"movie", 1}}};
  const auto v = build_vocab(counts, 10);
  const auto padded = encode(words({"good", "movie"}), v, 4, 1, 2);
  CHECK(padded.indices == std::vector<int>{v.lookup("good"), v.lookup("movie"), v.pad_index(), v.pad_index()});
  CHECK(padded.true_length == 2);
  CHECK(padded.label == 1);

  std::vector<std::string> long_review(500, "good");
  const auto clipped = encode(long_review, v, 200, 0, 2);
  CHECK(clipped.indices.size() == 200u);
  CHECK(clipped.true_length == 200);

  const auto oov = encode(words({"zzz_not_in_vocab"}), v, 3, 0, 2);
  CHECK(oov.indices == std::vector<int>{v.unk_index(), v.pad_index(), v.pad_index()});
  CHECK(oov.true_length == 1);

  const auto empty = encode(std::vector<std::string>{}, v, 3, 0, 2);
  CHECK(empty.indices[0] == v.unk_index());
  CHECK(empty.true_length == 1);

  CHECK_THROWS_AS(encode(words({"good"}), v, 3, 2, 2), ConfigError);
  CHECK_THROWS_AS(encode(words({"good"}), v, 0, 0, 2), ConfigError);
}

TEST_CASE("decode inverts encode for in-vocabulary tokens") {
  const std::vector<WordCounts> counts{{{"a", 1}, {"b", 1}, {"c", 1}}};
  const auto v = build_vocab(counts, 10);
  const auto toks = words({"c", "a", "b", "a"});
  CHECK(decode(encode(toks, v, 8, 0, 2), v) == toks);
}

TEST_CASE("tokenize splits on spaces only") {
  CHECK(tokenize("  great   camera ") == words({"great", "camera"}));
  CHECK(tokenize("Great,camera") == words({"Great,camera"}));
  CHECK(tokenize("Great Camera", {.lowercase = true}) == words({"great", "camera"}));
  CHECK(tokenize("").empty());
}

TEST_CASE("parse_corpus reads label TAB tokens") {
  std::istringstream one("1\tgreat camera\n");
  const auto r = parse_corpus(one, 2);
  REQUIRE(r.size() == 1u);
  CHECK(r[0].label == 1);
  CHECK(r[0].tokens == words({"great", "camera"}));

  std::istringstream empty("");
  CHECK(parse_corpus(empty, 2).empty());

  std::istringstream blank("\n0\ta\n\n1\tb\r\n");
  CHECK(parse_corpus(blank, 2).size() == 2u);
}

TEST_CASE("parse_corpus errors name the line") {
  auto line_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_corpus(in, 2);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("x\tfoo\n") == 1u);
  CHECK(line_of("0\tok\nno tab here\n") == 2u);
  CHECK(line_of("0\tok\n1\tok\n2\tbad label\n") == 3u);
  CHECK(line_of("-1\tbad\n") == 1u);
}

TEST_CASE("corpus files round trip") {
  test::TempDir dir("corpus");
  const std::vector<RawReview> reviews{{words({"a", "b"}), 0}, {words({"c"}), 1}};
  write_corpus_file(dir.path() / "train.tsv", reviews);
  const auto back = load_corpus_file(dir.path() / "train.tsv", 2);
  REQUIRE(back.size() == 2u);
  CHECK(back[0].tokens == reviews[0].tokens);
  CHECK(back[1].label == 1);
  CHECK_THROWS_AS(load_corpus_file(dir.path() / "missing.tsv", 2), IoError);
}

TEST_CASE("client corpora record their local vocabulary") {
  const std::vector<RawReview> train{{words({"a", "b"}), 0}, {words({"b"}), 1}};
  const std::vector<RawReview> test{{words({"zzz"}), 0}};
  const std::vector<WordCounts> counts{{{"a", 1}, {"b", 2}, {"c", 5}}};
  const auto v = build_vocab(counts, 10);
  const auto c = make_client_corpus("x", train, test, v, 4, 2);
  CHECK(c.train.size() == 2u);
  CHECK(c.test.size() == 1u);
  const std::vector<int> expect{v.lookup("a"), v.lookup("b"), v.unk_index(), v.pad_index()};
  std::vector<int> sorted = expect;
  std::sort(sorted.begin(), sorted.end());
  CHECK(c.local_vocab == sorted);
  CHECK_THROWS_AS(make_client_corpus("y", {}, test, v, 4, 2), ConfigError);
}

TEST_CASE("synthetic scenes are deterministic per seed") {
  SceneSpec spec;
  spec.clients = 1;
  spec.n_train = {40};
  spec.n_test = {10};
  const auto a = generate_synthetic_scene(spec, 7);
  const auto b = generate_synthetic_scene(spec, 7);
  const auto c = generate_synthetic_scene(spec, 8);
  CHECK(a.vocab.tokens() == b.vocab.tokens());
  REQUIRE(a.raw_train[0].size() == 40u);
  CHECK(a.raw_test[0].size() == 10u);
  bool same_as_other_seed = true;
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(a.raw_train[0][i].tokens == b.raw_train[0][i].tokens);
    CHECK(a.raw_train[0][i].label == b.raw_train[0][i].label);
    CHECK(a.clients[0].train[i].indices == b.clients[0].train[i].indices);
    same_as_other_seed = same_as_other_seed && a.raw_train[0][i].tokens == c.raw_train[0][i].tokens;
  }
  CHECK_FALSE(same_as_other_seed);
}

TEST_CASE("synthetic scenes are label balanced") {
  SceneSpec spec;
  spec.n_train = {40, 41, 42, 43};
  const auto s = generate_synthetic_scene(spec, 1);
  for (int k = 0; k < 4; ++k) {
    int ones = 0;
    for (const auto& r : s.raw_train[static_cast<std::size_t>(k)]) ones += r.label;
    CHECK(ones == (40 + k) / 2);
  }
}

TEST_CASE("scene spec validation") {
  SceneSpec spec;
  spec.n_train = {400, 0, 400, 400};
  CHECK_THROWS_AS(generate_synthetic_scene(spec, 1), ConfigError);
  SceneSpec rates;
  rates.sentiment_rate = 0.9;
  rates.domain_rate = 0.2;
  CHECK_THROWS_AS(rates.validate(), ConfigError);
  SceneSpec sizes;
  sizes.n_train = {1, 2};
  CHECK_THROWS_AS(sizes.validate(), ConfigError);
}

TEST_CASE("a zero-size domain lexicon gives every client the same distribution") {
  SceneSpec spec;
  spec.domain_lexicon = 0;
  spec.n_train = {2000};
  const auto s = generate_synthetic_scene(spec, 3);
  std::vector<double> agree;
  for (const auto& split : s.raw_train) {
    std::size_t sentiment = 0, matching = 0;
    for (const auto& r : split) {
      for (const auto& t : r.tokens) {
        CHECK((t[0] == 's' || t[0] == 'w'));
        if (t[0] == 's') {
          ++sentiment;
          matching += (t[1] - '0') == r.label;
        }
      }
    }
    agree.push_back(static_cast<double>(matching) / static_cast<double>(sentiment));
  }
  for (double a : agree) CHECK(a == doctest::Approx(spec.purity).epsilon(0.03));
}

TEST_CASE("opposite domain polarities make clients Non-IID") {
  // Domain words carry the signal; the two clients read them with opposite polarity.
  double cross_total = 0.0, own_total = 0.0;
  const int seeds = 5;
  for (int seed = 1; seed <= seeds; ++seed) {
    SceneSpec spec;
    spec.clients = 2;
    spec.polarity_shift = {0, 1};
    spec.sentiment_rate = 0.0;
    spec.domain_rate = 0.3;
    spec.purity = 0.85;
    const auto scene = generate_synthetic_scene(spec, static_cast<std::uint64_t>(seed));

    const auto mode = make_mode(ModeName::individual);
    const Network net({.vocab = static_cast<int>(scene.vocab.size()), .embed = 16, .hidden = 8,
                       .mlp = 16, .classes = 2},
                      mode.sharing);
    auto init = make_stream(static_cast<std::uint64_t>(seed), 0, -1, StreamPurpose::init);
    ParamSet params = net.init_params(init, {.scale = 0.5});
    OptState opt = make_opt_state(params, 0.05, 0.9);
    auto shuffle = make_stream(static_cast<std::uint64_t>(seed), 0, 0, StreamPurpose::shuffle);
    train_epochs(net, params, opt, scene.clients[0].train, 10, 8, LossConfig{}, shuffle);

    const double own = accuracy(net, params, scene.clients[0].test, InferenceWay::s);
    const double cross = accuracy(net, params, scene.clients[1].test, InferenceWay::s);
    CHECK(cross <= 0.6);
    own_total += own;
    cross_total += cross;
  }
  CHECK(own_total / seeds > 0.7);
  CHECK(cross_total / seeds <= 0.6);
}
