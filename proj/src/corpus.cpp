#include "fedsc/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "fedsc/errors.hpp"
#include "fedsc/rng.hpp"

namespace fedsc {

Vocab::Vocab(std::vector<std::string> ranked_tokens) : tokens_(std::move(ranked_tokens)) {
  tokens_.emplace_back(kUnkToken);
  tokens_.emplace_back(kPadToken);
  index_of_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto [it, inserted] = index_of_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw ConfigError("duplicate vocabulary token: " + tokens_[i]);
  }
  unk_ = static_cast<int>(tokens_.size()) - 2;
  pad_ = static_cast<int>(tokens_.size()) - 1;
}

int Vocab::lookup(std::string_view token) const {
  const auto it = index_of_.find(std::string(token));
  return it == index_of_.end() ? unk_ : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_of_.find(std::string(token)) != index_of_.end();
}

Vocab build_vocab(std::span<const WordCounts> per_client_counts, std::size_t max_size) {
  if (max_size < 2) throw ConfigError("max vocabulary size must be >= 2");
  WordCounts total;
  for (const auto& counts : per_client_counts) {
    for (const auto& [word, n] : counts) {
      if (n == 0 || word == kUnkToken || word == kPadToken) continue;
      total[word] += n;
    }
  }
  if (total.empty()) throw ConfigError("empty corpus: no word counts to build a vocabulary from");

  std::vector<std::pair<std::string, std::uint64_t>> ranked(total.begin(), total.end());
  // `total` is already in lexicographic order, so a stable sort on count
  // yields the lexicographic tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size) ranked.resize(max_size);

  std::vector<std::string> tokens;
  tokens.reserve(ranked.size() + 2);
  for (auto& [word, n] : ranked) tokens.push_back(std::move(word));
  return Vocab(std::move(tokens));
}

WordCounts count_words(std::span<const RawReview> reviews) {
  WordCounts counts;
  for (const auto& r : reviews)
    for (const auto& t : r.tokens) ++counts[t];
  return counts;
}

EncodedReview encode(std::span<const std::string> tokens, const Vocab& vocab, int max_len,
                     int label, int classes) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (label < 0 || label >= classes) {
    throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(classes) + ")");
  }
  EncodedReview out;
  out.label = label;
  out.indices.assign(static_cast<std::size_t>(max_len), vocab.pad_index());
  if (tokens.empty()) {
    out.indices[0] = vocab.unk_index();
    out.true_length = 1;
    return out;
  }
  const auto n = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(max_len));
  for (std::size_t i = 0; i < n; ++i) out.indices[i] = vocab.lookup(tokens[i]);
  out.true_length = static_cast<int>(n);
  return out;
}

std::vector<std::string> decode(const EncodedReview& review, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(review.true_length));
  for (int i = 0; i < review.true_length; ++i)
    out.push_back(vocab.token(review.indices[static_cast<std::size_t>(i)]));
  return out;
}

std::vector<std::string> tokenize(std::string_view text, const TokenizeOptions& opts) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) {
      std::string tok(text.substr(i, j - i));
      if (opts.lowercase) {
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      }
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

std::vector<RawReview> parse_corpus(std::istream& in, int classes, const TokenizeOptions& opts) {
  std::vector<RawReview> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(lineno, "expected label<TAB>tokens");
    const std::string_view label_text(line.data(), tab);
    int label = 0;
    const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc{} || ptr != label_text.data() + label_text.size() || label_text.empty())
      throw ParseError(lineno, "label is not an integer: '" + std::string(label_text) + "'");
    if (label < 0 || label >= classes)
      throw ParseError(lineno, "label " + std::to_string(label) + " outside [0, " +
                                   std::to_string(classes) + ")");
    out.push_back({tokenize(std::string_view(line).substr(tab + 1), opts), label});
  }
  return out;
}

std::vector<RawReview> load_corpus_file(const std::filesystem::path& path, int classes,
                                        const TokenizeOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  return parse_corpus(in, classes, opts);
}

void write_corpus_file(const std::filesystem::path& path, std::span<const RawReview> reviews) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : reviews) {
    out << r.label << '\t';
    for (std::size_t i = 0; i < r.tokens.size(); ++i) out << (i ? " " : "") << r.tokens[i];
    out << '\n';
  }
}

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

ClientCorpus make_client_corpus(std::string name, std::span<const RawReview> train,
                                std::span<const RawReview> test, const Vocab& vocab,
                                int max_len, int classes) {
  if (train.empty()) throw ConfigError("client " + name + " has no training reviews");
  ClientCorpus c;
  c.name = std::move(name);
  std::set<int> seen{vocab.unk_index(), vocab.pad_index()};
  auto add = [&](std::span<const RawReview> src, std::vector<EncodedReview>& dst) {
    dst.reserve(src.size());
    for (const auto& r : src) {
      dst.push_back(encode(r.tokens, vocab, max_len, r.label, classes));
      const auto& e = dst.back();
      seen.insert(e.indices.begin(), e.indices.begin() + e.true_length);
    }
  };
  add(train, c.train);
  add(test, c.test);
  c.local_vocab.assign(seen.begin(), seen.end());
  return c;
}

Scene build_scene(std::vector<std::string> names, std::vector<std::vector<RawReview>> train,
                  std::vector<std::vector<RawReview>> test, int classes, int max_len,
                  std::size_t max_vocab) {
  if (names.size() != train.size() || train.size() != test.size())
    throw ConfigError("scene: client name/train/test lists differ in length");
  std::vector<WordCounts> counts;
  counts.reserve(train.size());
  for (const auto& t : train) counts.push_back(count_words(t));

  Scene scene;
  scene.classes = classes;
  scene.max_len = max_len;
  scene.vocab = build_vocab(counts, max_vocab);
  for (std::size_t k = 0; k < names.size(); ++k) {
    scene.clients.push_back(
        make_client_corpus(names[k], train[k], test[k], scene.vocab, max_len, classes));
  }
  scene.raw_train = std::move(train);
  scene.raw_test = std::move(test);
  return scene;
}

int SceneSpec::train_size(int client) const {
  return n_train.size() == 1 ? n_train[0] : n_train.at(static_cast<std::size_t>(client));
}

int SceneSpec::test_size(int client) const {
  return n_test.size() == 1 ? n_test[0] : n_test.at(static_cast<std::size_t>(client));
}

int SceneSpec::shift(int client) const {
  if (polarity_shift.empty()) return client % classes;
  return polarity_shift.at(static_cast<std::size_t>(client)) % classes;
}

void SceneSpec::validate() const {
  if (clients < 1) throw ConfigError("scene needs at least one client");
  if (classes < 2) throw ConfigError("scene needs at least two classes");
  auto sized = [&](const std::vector<int>& v, const char* what) {
    if (v.size() != 1 && v.size() != static_cast<std::size_t>(clients))
      throw ConfigError(std::string("scene ") + what + " must have 1 or K entries");
  };
  sized(n_train, "n_train");
  sized(n_test, "n_test");
  for (int k = 0; k < clients; ++k) {
    if (train_size(k) <= 0) throw ConfigError("scene client " + std::to_string(k) + " has N^k = 0");
    if (test_size(k) < 0) throw ConfigError("scene n_test must be >= 0");
  }
  if (!polarity_shift.empty() && polarity_shift.size() != static_cast<std::size_t>(clients))
    throw ConfigError("scene polarity_shift must have K entries");
  if (shared_lexicon < 1 || domain_lexicon < 0 || filler_lexicon < 1)
    throw ConfigError("scene lexicon sizes invalid");
  if (min_length < 1 || max_length < min_length) throw ConfigError("scene length range invalid");
  const double rates = sentiment_rate + domain_rate + topic_rate;
  if (sentiment_rate < 0 || domain_rate < 0 || topic_rate < 0 || rates > 1.0)
    throw ConfigError("scene token rates must be nonnegative and sum to <= 1");
  if (purity < 0.0 || purity > 1.0) throw ConfigError("scene purity must be in [0, 1]");
  if (max_len < 1) throw ConfigError("scene max_len must be >= 1");
}

namespace {

int sentiment_group(int target, int classes, double purity, Rng& rng) {
  if (uniform01(rng) < purity) return target;
  const int other = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(classes - 1)));
  return other >= target ? other + 1 : other;
}

RawReview synth_review(const SceneSpec& s, int client, int label, Rng& rng) {
  RawReview r;
  r.label = label;
  const int span = s.max_length - s.min_length + 1;
  const int len = s.min_length + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span)));
  r.tokens.reserve(static_cast<std::size_t>(len));
  const bool domain = s.domain_lexicon > 0;
  for (int i = 0; i < len; ++i) {
    const double u = uniform01(rng);
    std::string tok;
    if (u < s.sentiment_rate) {
      const int g = sentiment_group(label, s.classes, s.purity, rng);
      tok = "s" + std::to_string(g) + "_" +
            std::to_string(uniform_index(rng, static_cast<std::uint64_t>(s.shared_lexicon)));
    } else if (domain && u < s.sentiment_rate + s.domain_rate) {
      const int target = (label + s.shift(client)) % s.classes;
      const int g = sentiment_group(target, s.classes, s.purity, rng);
      tok = "d" + std::to_string(g) + "_" +
            std::to_string(uniform_index(rng, static_cast<std::uint64_t>(s.domain_lexicon)));
    } else if (domain && u < s.sentiment_rate + s.domain_rate + s.topic_rate) {
      tok = "c" + std::to_string(client) + "_" +
            std::to_string(uniform_index(rng, static_cast<std::uint64_t>(s.domain_lexicon)));
    } else {
      tok = "w" + std::to_string(uniform_index(rng, static_cast<std::uint64_t>(s.filler_lexicon)));
    }
    r.tokens.push_back(std::move(tok));
  }
  return r;
}

std::vector<RawReview> synth_split(const SceneSpec& s, int client, int n, Rng& rng) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % s.classes;
  const auto order = shuffled_indices(labels.size(), rng);
  std::vector<RawReview> out;
  out.reserve(labels.size());
  for (const auto i : order) out.push_back(synth_review(s, client, labels[i], rng));
  return out;
}

}  // namespace

Scene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<std::string> names;
  std::vector<std::vector<RawReview>> train, test;
  for (int k = 0; k < spec.clients; ++k) {
    Rng rng = make_stream(seed, k, 0, StreamPurpose::scene);
    names.push_back("client" + std::to_string(k));
    train.push_back(synth_split(spec, k, spec.train_size(k), rng));
    test.push_back(synth_split(spec, k, spec.test_size(k), rng));
  }
  return build_scene(std::move(names), std::move(train), std::move(test), spec.classes,
                     spec.max_len, spec.max_vocab);
}

}  // namespace fedsc
