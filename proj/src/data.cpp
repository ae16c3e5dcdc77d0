#include "afa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "afa/sha256.hpp"

namespace afa {

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw data_error(strf("vocab: id %d out of range", id));
  return tokens[static_cast<size_t>(id)];
}

int Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw data_error("vocab: unknown token '" + token + "'");
  return it->second;
}

void Vocab::rebuild_index() {
  index_.clear();
  for (int i = 0; i < size(); ++i) index_[tokens[static_cast<size_t>(i)]] = i;
}

Vocab Vocab::synthetic(int core, int general, int specific) {
  if (core < 1 || general < 1 || specific < 1)
    throw usage_error("vocab: token groups must be non-empty");
  Vocab v;
  v.core_count = core;
  v.general_count = general;
  v.specific_count = specific;
  v.tokens = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};
  for (int i = 0; i < core; ++i) v.tokens.push_back(strf("core%02d", i));
  for (int i = 0; i < general; ++i) v.tokens.push_back(strf("gen%02d", i));
  for (int i = 0; i < specific; ++i) v.tokens.push_back(strf("spc%02d", i));
  v.rebuild_index();
  return v;
}

const Vocab& Vocab::default_synthetic() {
  static const Vocab v = synthetic();
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw data_error("vocab: cannot open for writing: " + path);
  for (const auto& t : tokens) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("vocab: cannot open: " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    v.tokens.push_back(line);
    if (line.rfind("core", 0) == 0) ++v.core_count;
    else if (line.rfind("gen", 0) == 0) ++v.general_count;
    else if (line.rfind("spc", 0) == 0) ++v.specific_count;
  }
  if (v.size() < kSpecialCount || v.tokens[0] != "[PAD]" || v.tokens[3] != "[MASK]")
    throw data_error("vocab: file does not start with the special tokens");
  v.rebuild_index();
  return v;
}

namespace {

struct Word {
  std::vector<int> ids;
};

struct MarkovChain {
  std::vector<Word> words;
  // Per word: cumulative probability over successor word indices.
  std::vector<std::vector<std::pair<double, int>>> transitions;
};

// Inventory and transition structure are functions of (vocab, spec, domain)
// only; the per-corpus seed drives sentence sampling alone, so corpora drawn
// with different seeds come from the same distribution.
constexpr uint64_t kInventorySeed = 0xAF00C0DEull;

std::vector<Word> make_words(Rng& rng, int count, int group_begin, int group_size,
                             int max_word_len) {
  std::vector<Word> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Word w;
    const int len = 1 + rng.uniform_int(max_word_len);
    for (int j = 0; j < len; ++j) w.ids.push_back(group_begin + rng.uniform_int(group_size));
    out.push_back(std::move(w));
  }
  return out;
}

MarkovChain build_chain(Domain domain, const Vocab& vocab, const CorpusSpec& spec) {
  if (spec.function_words > vocab.core_count)
    throw usage_error("corpus: more function words than core tokens");
  if (spec.overlap < 0 || spec.overlap > 1) throw usage_error("corpus: overlap outside [0,1]");
  if (spec.max_word_len < 1 || spec.content_words < 1 || spec.successors < 1 ||
      spec.min_sentence_words < 1 || spec.max_sentence_words < spec.min_sentence_words)
    throw usage_error("corpus: invalid corpus spec");

  MarkovChain chain;
  // Function words: one per core token, always shared between domains.
  for (int i = 0; i < spec.function_words; ++i)
    chain.words.push_back(Word{{vocab.core_begin() + i}});

  // Shared content words are built from core tokens so that at overlap 0 the
  // two corpora share only special and core function words.
  const int n_shared = static_cast<int>(std::lround(spec.overlap * spec.content_words));
  Rng shared_rng(mix_seed(kInventorySeed, 1));
  auto shared = make_words(shared_rng, n_shared, vocab.core_begin(), vocab.core_count,
                           spec.max_word_len);
  chain.words.insert(chain.words.end(), shared.begin(), shared.end());

  const int n_exclusive = spec.content_words - n_shared;
  const bool general = domain == Domain::general;
  Rng excl_rng(mix_seed(kInventorySeed, general ? 2 : 3));
  auto exclusive = make_words(excl_rng, n_exclusive,
                              general ? vocab.general_begin() : vocab.specific_begin(),
                              general ? vocab.general_count : vocab.specific_count,
                              spec.max_word_len);
  chain.words.insert(chain.words.end(), exclusive.begin(), exclusive.end());

  // Disjoint per-domain transition tables.
  Rng trans_rng(mix_seed(kInventorySeed, general ? 4 : 5));
  const int n = static_cast<int>(chain.words.size());
  const int k = std::min(spec.successors, n);
  chain.transitions.resize(static_cast<size_t>(n));
  for (int w = 0; w < n; ++w) {
    std::vector<int> succ;
    while (static_cast<int>(succ.size()) < k) {
      const int c = trans_rng.uniform_int(n);
      if (std::find(succ.begin(), succ.end(), c) == succ.end()) succ.push_back(c);
    }
    std::vector<double> weights;
    double total = 0;
    for (int j = 0; j < k; ++j) {
      const double wgt = 0.1 + trans_rng.uniform();
      weights.push_back(wgt);
      total += wgt;
    }
    double cum = 0;
    auto& row = chain.transitions[static_cast<size_t>(w)];
    for (int j = 0; j < k; ++j) {
      cum += weights[static_cast<size_t>(j)] / total;
      row.emplace_back(cum, succ[static_cast<size_t>(j)]);
    }
    row.back().first = 1.0;
  }
  return chain;
}

int sample_next(const MarkovChain& chain, int word, Rng& rng) {
  const double u = rng.uniform();
  for (const auto& [cum, next] : chain.transitions[static_cast<size_t>(word)])
    if (u < cum) return next;
  return chain.transitions[static_cast<size_t>(word)].back().second;
}

}  // namespace

std::vector<AnnotatedSequence> gen_domain_corpus(Domain domain, int n_sentences, uint64_t seed,
                                                 const Vocab& vocab, const CorpusSpec& spec) {
  if (n_sentences <= 0) throw usage_error("corpus: n_sentences must be positive");
  const MarkovChain chain = build_chain(domain, vocab, spec);
  Rng rng(seed);
  std::vector<AnnotatedSequence> out;
  out.reserve(static_cast<size_t>(n_sentences));
  const int n_words = static_cast<int>(chain.words.size());
  for (int s = 0; s < n_sentences; ++s) {
    AnnotatedSequence seq;
    const int len = spec.min_sentence_words +
                    rng.uniform_int(spec.max_sentence_words - spec.min_sentence_words + 1);
    int word = rng.uniform_int(n_words);
    for (int i = 0; i < len; ++i) {
      const auto& ids = chain.words[static_cast<size_t>(word)].ids;
      const int begin = static_cast<int>(seq.ids.size());
      seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
      seq.word_spans.emplace_back(begin, static_cast<int>(seq.ids.size()));
      word = sample_next(chain, word, rng);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<AnnotatedSequence> group_sentences(const std::vector<AnnotatedSequence>& sentences,
                                               int max_len, const Vocab& vocab) {
  if (max_len < 3) throw usage_error("group_sentences: max_len must allow [CLS] t [SEP]");
  std::vector<AnnotatedSequence> packs;
  AnnotatedSequence pack;
  auto open_pack = [&] {
    pack = AnnotatedSequence{};
    pack.ids.push_back(Vocab::kCls);
  };
  open_pack();
  for (const auto& s : sentences) {
    const int need = static_cast<int>(s.ids.size()) + 1;  // sentence + [SEP]
    if (static_cast<int>(s.ids.size()) > max_len - 2)
      throw data_error(strf("group_sentences: sentence of %zu tokens exceeds max_len %d budget",
                            s.ids.size(), max_len));
    if (static_cast<int>(pack.ids.size()) + need > max_len) {
      packs.push_back(std::move(pack));
      open_pack();
    }
    const int offset = static_cast<int>(pack.ids.size());
    pack.ids.insert(pack.ids.end(), s.ids.begin(), s.ids.end());
    for (const auto& [b, e] : s.word_spans) pack.word_spans.emplace_back(b + offset, e + offset);
    pack.ids.push_back(Vocab::kSep);
  }
  if (pack.ids.size() > 1) packs.push_back(std::move(pack));
  (void)vocab;
  return packs;
}

int CollatedBatch::true_length(Index row) const {
  int len = 0;
  for (Index j = 0; j < attention.cols(); ++j)
    if (attention(row, j) != 0) ++len;
  return len;
}

std::string CollatedBatch::digest() const {
  Sha256 h;
  const int64_t shape[2] = {input_ids.rows(), input_ids.cols()};
  h.update(shape, sizeof(shape));
  h.update(input_ids.data(), sizeof(int) * static_cast<size_t>(input_ids.size()));
  h.update(labels.data(), sizeof(int) * static_cast<size_t>(labels.size()));
  h.update(attention.data(), sizeof(int) * static_cast<size_t>(attention.size()));
  return to_hex(h.finish());
}

CollatedBatch wwm_collate(const std::vector<AnnotatedSequence>& sequences, double mask_rate,
                          uint64_t seed, const Vocab& vocab, int pad_to) {
  if (mask_rate < 0 || mask_rate >= 1) throw usage_error("wwm_collate: mask_rate outside [0,1)");
  if (sequences.empty()) throw usage_error("wwm_collate: empty batch");
  Index width = pad_to;
  for (const auto& s : sequences)
    width = std::max<Index>(width, static_cast<Index>(s.ids.size()));

  CollatedBatch batch;
  batch.input_ids = IMat::Constant(static_cast<Index>(sequences.size()), width, Vocab::kPad);
  batch.labels = IMat::Constant(static_cast<Index>(sequences.size()), width, kIgnoreIndex);
  batch.attention = IMat::Zero(static_cast<Index>(sequences.size()), width);

  const int non_special = vocab.size() - Vocab::kSpecialCount;
  for (size_t r = 0; r < sequences.size(); ++r) {
    const auto& seq = sequences[r];
    const Index row = static_cast<Index>(r);
    for (size_t j = 0; j < seq.ids.size(); ++j) {
      batch.input_ids(row, static_cast<Index>(j)) = seq.ids[j];
      batch.attention(row, static_cast<Index>(j)) = 1;
    }
    // Per-sequence derived seed keeps collation order-independent across
    // batches and safe to parallelize.
    Rng rng(mix_seed(seed, r));
    long maskable = 0;
    for (const auto& [b, e] : seq.word_spans) maskable += e - b;
    if (maskable == 0) continue;
    const long quota = static_cast<long>(std::ceil(mask_rate * static_cast<double>(maskable)));
    if (quota == 0) continue;

    std::vector<size_t> order(seq.word_spans.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);

    long selected = 0;
    for (size_t oi = 0; oi < order.size() && selected < quota; ++oi) {
      const auto& [b, e] = seq.word_spans[order[oi]];
      // The whole span is corrupted even when it overshoots the quota.
      for (int pos = b; pos < e; ++pos) {
        const int original = seq.ids[static_cast<size_t>(pos)];
        batch.labels(row, pos) = original;
        const double u = rng.uniform();
        if (u < 0.8) {
          batch.input_ids(row, pos) = Vocab::kMask;
        } else if (u < 0.9) {
          // left unchanged
        } else {
          batch.input_ids(row, pos) =
              Vocab::kSpecialCount + rng.uniform_int(non_special);
        }
      }
      selected += e - b;
    }
  }
  return batch;
}

void save_corpus(const std::string& path, const std::vector<AnnotatedSequence>& sentences,
                 const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw data_error("corpus: cannot open for writing: " + path);
  for (const auto& s : sentences) {
    for (size_t w = 0; w < s.word_spans.size(); ++w) {
      const auto& [b, e] = s.word_spans[w];
      if (w != 0) out << ' ';
      for (int j = b; j < e; ++j) {
        if (j != b) out << '|';
        out << vocab.token(s.ids[static_cast<size_t>(j)]);
      }
    }
    out << '\n';
  }
  if (!out) throw data_error("corpus: write failed: " + path);
}

std::vector<AnnotatedSequence> load_corpus(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw data_error("corpus: cannot open: " + path);
  std::vector<AnnotatedSequence> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    AnnotatedSequence seq;
    std::istringstream words(line);
    std::string word;
    while (words >> word) {
      const int begin = static_cast<int>(seq.ids.size());
      size_t start = 0;
      while (start <= word.size()) {
        const size_t bar = word.find('|', start);
        const std::string tok = word.substr(start, bar == std::string::npos ? bar : bar - start);
        if (tok.empty())
          throw data_error(strf("corpus: %s:%zu: empty token", path.c_str(), line_no));
        seq.ids.push_back(vocab.id_of(tok));
        if (bar == std::string::npos) break;
        start = bar + 1;
      }
      seq.word_spans.emplace_back(begin, static_cast<int>(seq.ids.size()));
    }
    if (!seq.ids.empty()) out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace afa
