#include "doctest.h"
#include "meld/bpe.hpp"
#include "meld/vocab.hpp"
#include "test_util.hpp"

#include <set>

using namespace meld;
using namespace meld::text;

TEST_CASE("bpe on 'aaaa' with one merge slot merges a+a") {
  std::vector<std::string> corpus{"aaaa"};
  const auto m = train_bpe(corpus, 257);
  REQUIRE(m.merges().size() == 1);
  CHECK(m.merges()[0] == std::pair<int, int>{'a', 'a'});
  CHECK(m.encode("aaaa") == std::vector<int>{256, 256});
}

TEST_CASE("bpe at the base alphabet size is plain bytes") {
  std::vector<std::string> corpus{"hello world"};
  const auto m = train_bpe(corpus, 256);
  CHECK(m.merges().empty());
  const auto ids = m.encode("hi!");
  CHECK(ids == std::vector<int>{'h', 'i', '!'});
  CHECK_THROWS_AS(train_bpe(corpus, 255), ConfigError);
  CHECK_THROWS_AS(train_bpe(std::vector<std::string>{}, 300), EmptyInputError);
}

TEST_CASE("bpe round-trips training lines, unseen text and random bytes") {
  std::vector<std::string> corpus{"ba ke mi", "ke ke ba", "mi so ba ke", "so so"};
  const auto m = train_bpe(corpus, 300);
  CHECK(m.vocab_size() > 256);
  for (const auto& line : corpus) {
    CHECK(m.decode(m.encode(line)) == line);
    CHECK(m.encode(line).size() < line.size());
  }
  CHECK(m.encode("").empty());
  CHECK(m.decode(m.encode("zebra ÄÖ \x01")) == "zebra ÄÖ \x01");
  Rng rng(11);
  std::string blob(1024, '\0');
  for (auto& c : blob) c = static_cast<char>(rng.uniform_int(0, 255));
  CHECK(m.decode(m.encode(blob)) == blob);
  const std::vector<int> bad{m.vocab_size()};
  CHECK_THROWS_AS(m.decode(bad), RangeError);
}

TEST_CASE("bpe training is deterministic with lexicographic tie-breaks") {
  // "ab" and "cd" both occur twice; the lexicographically smaller pair wins.
  std::vector<std::string> corpus{"cdab", "abcd"};
  const auto m = train_bpe(corpus, 257);
  REQUIRE(m.merges().size() == 1);
  CHECK(m.merges()[0] == std::pair<int, int>{'a', 'b'});
  const auto again = train_bpe(corpus, 257);
  CHECK(again.merges() == m.merges());
}

TEST_CASE("bpe stops when no pair repeats") {
  std::vector<std::string> corpus{"abcdef"};
  const auto m = train_bpe(corpus, 400);
  CHECK(m.merges().empty());
}

TEST_CASE("bpe json round-trip preserves encoding") {
  std::vector<std::string> corpus{"ba ke mi", "ke ke ba", "mi so ba ke", "so so"};
  const auto m = train_bpe(corpus, 280);
  const auto back = BpeModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  CHECK(back.merges() == m.merges());
  for (const auto& line : corpus) CHECK(back.encode(line) == m.encode(line));
  CHECK(printable_to_bytes(bytes_to_printable(std::string("\x00\xff a", 4))) == std::string("\x00\xff a", 4));
}

TEST_CASE("unified vocab layout") {
  const auto big = make_unified_vocab(4096, 8192);
  CHECK(big.total == 12291);
  const auto v = make_unified_vocab(256, 32);
  CHECK(v.id_eos == 290);
  CHECK(v.id_tts == 288);
  CHECK(v.id_stt == 289);
  CHECK(v.latent_id(0) == v.v_text);
  for (int k = 0; k < 32; ++k) CHECK(v.latent_id(k) - v.v_text == k);
  int text = 0, lat = 0, spec = 0;
  for (int id = 0; id < v.total; ++id) {
    const int hits = int(v.is_text(id)) + int(v.is_latent(id)) + int(v.is_special(id));
    CHECK(hits == 1);
    text += v.is_text(id);
    lat += v.is_latent(id);
    spec += v.is_special(id);
  }
  CHECK(text == 256);
  CHECK(lat == 32);
  CHECK(spec == 3);
  CHECK_FALSE(v.is_valid(v.total));
  CHECK_THROWS_AS(v.latent_id(32), RangeError);
  CHECK_THROWS_AS(make_unified_vocab(0, 3), ConfigError);
  CHECK(v.is_target_for(Mode::kTts, v.id_eos));
  CHECK_FALSE(v.is_target_for(Mode::kTts, 5));
  CHECK(v.is_target_for(Mode::kStt, 5));
  CHECK_FALSE(v.is_target_for(Mode::kStt, v.latent_id(3)));
  CHECK_FALSE(v.is_target_for(Mode::kStt, v.id_tts));
  CHECK(UnifiedVocab::from_json(v.to_json()) == v);
  const std::vector<int> bad{0, v.total};
  CHECK_THROWS_AS(v.validate_ids(bad), RangeError);
}
