#include <doctest.h>

#include <map>
#include <set>

#include "afa/data.hpp"

using namespace afa;

namespace {

const Vocab& vocab() { return Vocab::default_synthetic(); }

std::map<int, long> token_histogram(const std::vector<AnnotatedSequence>& corpus) {
  std::map<int, long> hist;
  for (const auto& s : corpus)
    for (int id : s.ids) ++hist[id];
  return hist;
}

double total_variation(const std::map<int, long>& a, const std::map<int, long>& b) {
  long na = 0, nb = 0;
  for (const auto& [id, n] : a) na += n;
  for (const auto& [id, n] : b) nb += n;
  std::set<int> ids;
  for (const auto& [id, n] : a) ids.insert(id);
  for (const auto& [id, n] : b) ids.insert(id);
  double tv = 0;
  for (int id : ids) {
    const double pa = a.count(id) ? double(a.at(id)) / na : 0.0;
    const double pb = b.count(id) ? double(b.at(id)) / nb : 0.0;
    tv += std::abs(pa - pb);
  }
  return tv / 2;
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("default vocabulary layout") {
  const Vocab& v = vocab();
  CHECK(v.size() == 201);
  CHECK(v.token(Vocab::kPad) == "[PAD]");
  CHECK(v.token(Vocab::kMask) == "[MASK]");
  CHECK(v.id_of("core00") == v.core_begin());
  CHECK(v.id_of("gen00") == v.general_begin());
  CHECK(v.id_of("spc00") == v.specific_begin());
  CHECK_THROWS_AS(v.id_of("nope"), data_error);
}

TEST_CASE("corpus generation is deterministic in the seed") {
  const auto a = gen_domain_corpus(Domain::general, 50, 9, vocab());
  const auto b = gen_domain_corpus(Domain::general, 50, 9, vocab());
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].ids == b[i].ids);
    CHECK(a[i].word_spans == b[i].word_spans);
  }
  const auto c = gen_domain_corpus(Domain::general, 50, 10, vocab());
  CHECK(a[0].ids != c[0].ids);
}

TEST_CASE("word spans partition every sentence") {
  const auto corpus = gen_domain_corpus(Domain::specific, 200, 3, vocab());
  for (const auto& s : corpus) {
    int expected_begin = 0;
    for (const auto& [b, e] : s.word_spans) {
      CHECK(b == expected_begin);
      CHECK(e > b);
      CHECK(e - b <= 3);
      expected_begin = e;
    }
    CHECK(expected_begin == static_cast<int>(s.ids.size()));
    for (int id : s.ids) CHECK_FALSE(vocab().is_special(id));
  }
}

TEST_CASE("zero overlap corpora share only core function words") {
  CorpusSpec spec;
  spec.overlap = 0.0;
  const auto general = gen_domain_corpus(Domain::general, 400, 5, vocab(), spec);
  const auto specific = gen_domain_corpus(Domain::specific, 400, 6, vocab(), spec);
  std::set<int> gen_tokens, spc_tokens;
  for (const auto& s : general) gen_tokens.insert(s.ids.begin(), s.ids.end());
  for (const auto& s : specific) spc_tokens.insert(s.ids.begin(), s.ids.end());
  for (int id : gen_tokens) {
    if (spc_tokens.count(id)) {
      CHECK(id >= vocab().core_begin());
      CHECK(id < vocab().general_begin());
    }
  }
  // and each domain's exclusive group never leaks into the other corpus
  for (int id : gen_tokens) CHECK(id < vocab().specific_begin());
  for (int id : spc_tokens)
    CHECK((id < vocab().general_begin() || id >= vocab().specific_begin()));
}

TEST_CASE("domain unigram distributions differ substantially") {
  const auto general = gen_domain_corpus(Domain::general, 10000, 21, vocab());
  const auto specific = gen_domain_corpus(Domain::specific, 10000, 22, vocab());
  const double tv = total_variation(token_histogram(general), token_histogram(specific));
  CHECK(tv > 0.2);
}

TEST_CASE("corpus generation rejects an empty request") {
  CHECK_THROWS_AS(gen_domain_corpus(Domain::general, 0, 1, vocab()), usage_error);
}

TEST_CASE("grouping wraps single sentences in CLS/SEP") {
  AnnotatedSequence s;
  s.ids = {10, 11, 12};
  s.word_spans = {{0, 2}, {2, 3}};
  const auto packs = group_sentences({s}, 16, vocab());
  REQUIRE(packs.size() == 1);
  CHECK(packs[0].ids == std::vector<int>{Vocab::kCls, 10, 11, 12, Vocab::kSep});
  CHECK(packs[0].word_spans == std::vector<std::pair<int, int>>{{1, 3}, {3, 4}});
}

TEST_CASE("grouping packs two sentences with two separators and re-offsets spans") {
  AnnotatedSequence s1, s2;
  s1.ids = {10, 11};
  s1.word_spans = {{0, 2}};
  s2.ids = {20, 21, 22};
  s2.word_spans = {{0, 1}, {1, 3}};
  const auto packs = group_sentences({s1, s2}, 16, vocab());
  REQUIRE(packs.size() == 1);
  CHECK(packs[0].ids == std::vector<int>{Vocab::kCls, 10, 11, Vocab::kSep, 20, 21, 22,
                                         Vocab::kSep});
  // token at position p of sentence 2 lands at p + len(s1) + 2
  CHECK(packs[0].word_spans == std::vector<std::pair<int, int>>{{1, 3}, {4, 5}, {5, 7}});
}

TEST_CASE("grouping starts a new pack when the next sentence does not fit") {
  AnnotatedSequence s;
  s.ids = {10, 11, 12, 13};
  s.word_spans = {{0, 4}};
  const auto packs = group_sentences({s, s, s}, 11, vocab());
  REQUIRE(packs.size() == 2);
  CHECK(packs[0].ids.size() == 11);  // CLS + 2 x (4 tokens + SEP)
  CHECK(packs[1].ids.size() == 6);
}

TEST_CASE("grouping rejects oversize sentences") {
  AnnotatedSequence s;
  s.ids.assign(15, 10);
  s.word_spans = {{0, 15}};
  CHECK_THROWS_AS(group_sentences({s}, 16, vocab()), data_error);
}

TEST_CASE("collation at rate zero leaves inputs untouched") {
  const auto corpus = gen_domain_corpus(Domain::general, 20, 31, vocab());
  const auto packs = group_sentences(corpus, 64, vocab());
  const CollatedBatch batch = wwm_collate(packs, 0.0, 7, vocab());
  for (Index r = 0; r < batch.rows(); ++r) {
    for (Index c = 0; c < batch.cols(); ++c) {
      CHECK(batch.labels(r, c) == kIgnoreIndex);
      if (c < static_cast<Index>(packs[size_t(r)].ids.size()))
        CHECK(batch.input_ids(r, c) == packs[size_t(r)].ids[size_t(c)]);
    }
  }
}

TEST_CASE("selecting a multi-token word labels the whole word") {
  AnnotatedSequence s;
  s.ids = {10, 11, 12};
  s.word_spans = {{0, 3}};  // one three-token word
  const auto packs = group_sentences({s}, 16, vocab());
  const CollatedBatch batch = wwm_collate(packs, 0.05, 11, vocab());
  // quota = ceil(0.05 * 3) = 1, so the single word is selected and whole-word
  // atomicity labels all three positions
  for (int p = 1; p <= 3; ++p) CHECK(batch.labels(0, p) == s.ids[size_t(p - 1)]);
  CHECK(batch.labels(0, 0) == kIgnoreIndex);
  CHECK(batch.labels(0, 4) == kIgnoreIndex);
}

TEST_CASE("collation is a pure function of sequences, rate and seed") {
  const auto corpus = gen_domain_corpus(Domain::general, 50, 33, vocab());
  const auto packs = group_sentences(corpus, 64, vocab());
  CHECK(wwm_collate(packs, 0.15, 5, vocab()).digest() ==
        wwm_collate(packs, 0.15, 5, vocab()).digest());
  CHECK(wwm_collate(packs, 0.15, 5, vocab()).digest() !=
        wwm_collate(packs, 0.15, 6, vocab()).digest());
}

TEST_CASE("whole-word masking statistics over 100k+ positions") {
  const auto corpus = gen_domain_corpus(Domain::general, 8000, 41, vocab());
  const auto packs = group_sentences(corpus, 256, vocab());
  const CollatedBatch batch = wwm_collate(packs, 0.15, 42, vocab());

  long maskable = 0, labeled = 0, masked = 0, unchanged = 0, randomized = 0;
  long atomicity_violations = 0, special_violations = 0;
  size_t pack_index = 0;
  for (Index r = 0; r < batch.rows(); ++r, ++pack_index) {
    const auto& pack = packs[pack_index];
    for (const auto& [b, e] : pack.word_spans) {
      maskable += e - b;
      bool any = false, all = true;
      for (int p = b; p < e; ++p) {
        if (batch.labels(r, p) != kIgnoreIndex) any = true;
        else all = false;
      }
      if (any && !all) ++atomicity_violations;
      for (int p = b; p < e; ++p) {
        if (batch.labels(r, p) == kIgnoreIndex) continue;
        ++labeled;
        const int original = pack.ids[size_t(p)];
        const int input = batch.input_ids(r, p);
        CHECK(batch.labels(r, p) == original);
        if (input == Vocab::kMask) ++masked;
        else if (input == original) ++unchanged;
        else ++randomized;
        if (input != Vocab::kMask && vocab().is_special(input)) ++special_violations;
      }
    }
    // positions outside word spans (CLS/SEP/PAD) stay intact and unlabeled
    std::set<int> in_span;
    for (const auto& [b, e] : pack.word_spans)
      for (int p = b; p < e; ++p) in_span.insert(p);
    for (Index c = 0; c < batch.cols(); ++c) {
      if (in_span.count(static_cast<int>(c))) continue;
      if (batch.labels(r, c) != kIgnoreIndex) ++special_violations;
      if (c < static_cast<Index>(pack.ids.size()) &&
          batch.input_ids(r, c) != pack.ids[size_t(c)])
        ++special_violations;
    }
  }
  REQUIRE(labeled > 100000 * 0.14);
  CHECK(atomicity_violations == 0);
  CHECK(special_violations == 0);
  const double rate = double(labeled) / double(maskable);
  INFO("maskable ", maskable, " labeled ", labeled, " rate ", rate);
  CHECK(rate >= 0.14);
  CHECK(rate <= 0.16);
  const double mask_share = double(masked) / double(labeled);
  const double keep_share = double(unchanged) / double(labeled);
  const double rand_share = double(randomized) / double(labeled);
  CHECK(mask_share >= 0.78);
  CHECK(mask_share <= 0.82);
  CHECK(keep_share >= 0.08);
  CHECK(keep_share <= 0.12);
  CHECK(rand_share >= 0.08);
  CHECK(rand_share <= 0.12);
}

TEST_CASE("collation validates its arguments") {
  const auto corpus = gen_domain_corpus(Domain::general, 5, 51, vocab());
  const auto packs = group_sentences(corpus, 64, vocab());
  CHECK_THROWS_AS(wwm_collate(packs, 1.0, 1, vocab()), usage_error);
  CHECK_THROWS_AS(wwm_collate({}, 0.15, 1, vocab()), usage_error);
}

TEST_CASE("corpus file round trip preserves ids and word spans") {
  const auto corpus = gen_domain_corpus(Domain::specific, 40, 61, vocab());
  const std::string path = "corpus_roundtrip_test.txt";
  save_corpus(path, corpus, vocab());
  const auto loaded = load_corpus(path, vocab());
  REQUIRE(loaded.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(loaded[i].ids == corpus[i].ids);
    CHECK(loaded[i].word_spans == corpus[i].word_spans);
  }
  std::remove(path.c_str());
}

TEST_CASE("vocab file round trip") {
  const std::string path = "vocab_roundtrip_test.txt";
  vocab().save(path);
  const Vocab loaded = Vocab::load(path);
  CHECK(loaded.size() == vocab().size());
  CHECK(loaded.core_count == vocab().core_count);
  CHECK(loaded.id_of("spc89") == vocab().id_of("spc89"));
  std::remove(path.c_str());
}

TEST_SUITE_END();
