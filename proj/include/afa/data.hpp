#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "afa/common.hpp"
#include "afa/rng.hpp"

#include <Eigen/Dense>

namespace afa {

using Index = Eigen::Index;

// Label value for positions the MLM loss ignores; reserved outside the vocab
// id range.
constexpr int kIgnoreIndex = -1;

// Token table. Ids 0..4 are the special tokens; the rest partition into a
// shared "core" group and two domain-exclusive groups, recognizable by their
// string prefixes (core/gen/spc).
struct Vocab {
  std::vector<std::string> tokens;
  int core_count = 0;
  int general_count = 0;
  int specific_count = 0;

  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kMask = 3;
  static constexpr int kUnk = 4;
  static constexpr int kSpecialCount = 5;

  int size() const { return static_cast<int>(tokens.size()); }
  bool is_special(int id) const { return id >= 0 && id < kSpecialCount; }
  int core_begin() const { return kSpecialCount; }
  int general_begin() const { return kSpecialCount + core_count; }
  int specific_begin() const { return kSpecialCount + core_count + general_count; }

  const std::string& token(int id) const;
  int id_of(const std::string& token) const;
  void rebuild_index();

  static Vocab synthetic(int core = 16, int general = 90, int specific = 90);
  // The artifact-wide default table (201 tokens); every CLI command uses it.
  static const Vocab& default_synthetic();

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::unordered_map<std::string, int> index_;
};

enum class Domain { general, specific };

inline const char* to_string(Domain d) {
  return d == Domain::general ? "general" : "specific";
}

inline Domain domain_from_string(const std::string& s) {
  if (s == "general") return Domain::general;
  if (s == "specific") return Domain::specific;
  throw usage_error("unknown domain: " + s);
}

// Corpus generator knobs. Words are fixed 1..max_word_len token units; both
// domains always share the single-token function words, share a
// `overlap`-fraction of their content-word inventories, and use disjoint
// Markov transition tables.
struct CorpusSpec {
  int function_words = 12;
  int content_words = 100;
  double overlap = 0.5;
  int max_word_len = 3;
  int min_sentence_words = 4;
  int max_sentence_words = 12;
  int successors = 8;
};

// Token ids plus word-boundary annotations. Spans are half-open [begin, end),
// ordered, non-overlapping, and cover every non-special position.
struct AnnotatedSequence {
  std::vector<int> ids;
  std::vector<std::pair<int, int>> word_spans;
};

std::vector<AnnotatedSequence> gen_domain_corpus(Domain domain, int n_sentences, uint64_t seed,
                                                 const Vocab& vocab, const CorpusSpec& spec = {});

// Greedy packing in input order: [CLS] s1 [SEP] s2 [SEP] ... up to max_len,
// with word spans re-offset to pack coordinates.
std::vector<AnnotatedSequence> group_sentences(const std::vector<AnnotatedSequence>& sentences,
                                               int max_len, const Vocab& vocab);

using IMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One collated MLM batch: corrupted inputs, labels (original id at corrupted
// positions, kIgnoreIndex elsewhere), and a 0/1 attention row per sequence.
struct CollatedBatch {
  IMat input_ids;
  IMat labels;
  IMat attention;

  Index rows() const { return input_ids.rows(); }
  Index cols() const { return input_ids.cols(); }
  int true_length(Index row) const;
  std::string digest() const;
};

// Whole-word-masking collation. Per sequence: word spans are shuffled with a
// seeded RNG and selected until the selected token count reaches
// ceil(mask_rate * maskable tokens); every token of a selected span is then
// corrupted independently (80% [MASK], 10% unchanged, 10% random non-special
// token). Pure function of (sequences, mask_rate, seed).
CollatedBatch wwm_collate(const std::vector<AnnotatedSequence>& sequences, double mask_rate,
                          uint64_t seed, const Vocab& vocab, int pad_to = 0);

// Line-oriented corpus file: one sentence per line, words separated by
// spaces, tokens inside a multi-token word joined with '|'.
void save_corpus(const std::string& path, const std::vector<AnnotatedSequence>& sentences,
                 const Vocab& vocab);
std::vector<AnnotatedSequence> load_corpus(const std::string& path, const Vocab& vocab);

}  // namespace afa
