#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fedsc {

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::size_t kDefaultMaxVocab = 50000;

using WordCounts = std::map<std::string, std::uint64_t>;

/// Global token <-> index map. The unknown and padding tokens always occupy
/// the last two slots.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> ranked_tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  int unk_index() const noexcept { return unk_; }
  int pad_index() const noexcept { return pad_; }
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Index of `token`, or unk_index() when out of vocabulary.
  int lookup(std::string_view token) const;
  bool contains(std::string_view token) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_of_;
  int unk_ = -1;
  int pad_ = -1;
};

struct EncodedReview {
  std::vector<int> indices;  // exactly L entries
  int true_length = 1;
  int label = 0;
};

struct RawReview {
  std::vector<std::string> tokens;
  int label = 0;
};

struct ClientCorpus {
  std::string name;
  std::vector<EncodedReview> train;
  std::vector<EncodedReview> test;
  std::vector<int> local_vocab;  // sorted; includes unk and pad
};

/// Sums the per-client counts and keeps the `max_size` most frequent tokens,
/// ties broken lexicographically, then appends <unk> and <pad>.
Vocab build_vocab(std::span<const WordCounts> per_client_counts, std::size_t max_size);

WordCounts count_words(std::span<const RawReview> reviews);

/// Clips or pads to `max_len`. An empty token list encodes as a single <unk>.
EncodedReview encode(std::span<const std::string> tokens, const Vocab& vocab, int max_len,
                     int label, int classes);

/// In-vocabulary tokens of the first true_length positions.
std::vector<std::string> decode(const EncodedReview& review, const Vocab& vocab);

struct TokenizeOptions {
  bool lowercase = false;
};

std::vector<std::string> tokenize(std::string_view text, const TokenizeOptions& opts = {});

/// Reads `label<TAB>token token ...` records. Blank lines are skipped.
std::vector<RawReview> load_corpus_file(const std::filesystem::path& path, int classes,
                                        const TokenizeOptions& opts = {});
std::vector<RawReview> parse_corpus(std::istream& in, int classes,
                                    const TokenizeOptions& opts = {});
void write_corpus_file(const std::filesystem::path& path, std::span<const RawReview> reviews);

/// One token per line; line number (0-based) is the index.
void write_vocab(const std::filesystem::path& path, const Vocab& vocab);

ClientCorpus make_client_corpus(std::string name, std::span<const RawReview> train,
                                std::span<const RawReview> test, const Vocab& vocab,
                                int max_len, int classes);

/// Parameters of the synthetic Non-IID scene.
///
/// Every review mixes four token families:
///   - shared sentiment words, tied to the label identically on all clients;
///   - domain sentiment words, tied to (label + polarity_shift[k]) mod C, so
///     clients with different shifts disagree on what these words mean;
///   - client topic words, label-neutral but private to one client;
///   - filler words, label-neutral and global.
/// A domain lexicon of size 0 removes both client-specific families, which
/// leaves every client with the same generative distribution.
struct SceneSpec {
  int clients = 4;
  int classes = 2;
  std::vector<int> n_train{400};  // one entry broadcasts to all clients
  std::vector<int> n_test{100};
  int shared_lexicon = 40;        // words per class
  int domain_lexicon = 10;        // words per class, plus this many topic words per client
  int filler_lexicon = 150;
  int min_length = 8;
  int max_length = 30;
  double sentiment_rate = 0.12;
  double domain_rate = 0.12;
  double topic_rate = 0.10;
  double purity = 0.75;           // chance a sentiment-bearing token agrees with its group
  std::vector<int> polarity_shift;  // empty: client k gets k mod C
  int max_len = 32;
  std::size_t max_vocab = kDefaultMaxVocab;

  int train_size(int client) const;
  int test_size(int client) const;
  int shift(int client) const;
  void validate() const;
};

struct Scene {
  Vocab vocab;
  std::vector<ClientCorpus> clients;
  int classes = 2;
  int max_len = 32;
  std::vector<std::vector<RawReview>> raw_train;
  std::vector<std::vector<RawReview>> raw_test;
};

Scene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed);

/// Builds a scene from per-client raw corpora (vocabulary counted on train splits).
Scene build_scene(std::vector<std::string> names, std::vector<std::vector<RawReview>> train,
                  std::vector<std::vector<RawReview>> test, int classes, int max_len,
                  std::size_t max_vocab);

}  // namespace fedsc
