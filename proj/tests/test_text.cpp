#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mmd/common.hpp"
#include "mmd/vocab.hpp"

using namespace mmd;

TEST_CASE("specials occupy ids 0..7 in the declared order") {
  Vocab v;
  CHECK(v.size() == 8);
  CHECK(v.token(Vocab::kPad) == "[pad]");
  CHECK(v.token(Vocab::kBos) == "[bos]");
  CHECK(v.token(Vocab::kEos) == "[eos]");
  CHECK(v.token(Vocab::kUnk) == "[unk]");
  CHECK(v.token(Vocab::kVideoSeg) == "[video]");
  CHECK(v.token(Vocab::kCapSeg) == "[cap]");
  CHECK(v.token(Vocab::kUser1Seg) == "[user1]");
  CHECK(v.token(Vocab::kUser2Seg) == "[user2]");
}

TEST_CASE("normalization: lowercase, whitespace split, trailing punct") {
  CHECK(normalize_text("A Cat sat.") ==
        std::vector<std::string>{"a", "cat", "sat", "."});
  CHECK(normalize_text("really?!") ==
        std::vector<std::string>{"really", "?", "!"});
  CHECK(normalize_text("  spaced\tout\n") ==
        std::vector<std::string>{"spaced", "out"});
  CHECK(normalize_text("...") ==
        std::vector<std::string>{".", ".", "."});
  CHECK(normalize_text("").empty());
}

TEST_CASE("build_vocab ordering and min_freq") {
  Vocab v = build_vocab({"a cat", "a dog"}, 1);
  CHECK(v.size() == 8 + 3);
  CHECK(v.token(8) == "a");  // frequency 2 beats the others
  CHECK(v.token(9) == "cat");
  CHECK(v.token(10) == "dog");

  Vocab strict = build_vocab({"a cat", "a dog"}, 2);
  CHECK(strict.size() == 8 + 1);
  CHECK(strict.id("cat") == Vocab::kUnk);
  CHECK(strict.id("dog") == Vocab::kUnk);
  CHECK(strict.id("a") == 8);
}

TEST_CASE("build_vocab rejects an empty corpus") {
  CHECK_THROWS_AS(build_vocab({}, 1), Error);
}

TEST_CASE("encode basics") {
  Vocab v = build_vocab({"the cat sat on the mat"}, 1);
  CHECK(encode("", v).empty());
  auto ids = encode("the zebra sat", v);
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == v.id("the"));
  CHECK(ids[1] == Vocab::kUnk);
  CHECK(ids[2] == v.id("sat"));
}

TEST_CASE("decode strips specials and round-trips") {
  Vocab v = build_vocab({"the cat sat on the mat ."}, 1);
  CHECK(decode({Vocab::kEos}, v).empty());
  std::string text = "The cat SAT.";
  std::string norm = join_tokens(normalize_text(text));
  CHECK(decode(encode(text, v), v) == norm);
  CHECK_THROWS_AS(decode({v.size()}, v), Error);
}

TEST_CASE("random id lists round-trip through decode then encode") {
  Vocab v = build_vocab({"alpha beta gamma delta epsilon zeta eta theta"}, 1);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<TokenId> ids;
    auto n = 1 + rng.below(12);
    for (std::uint64_t i = 0; i < n; ++i)
      ids.push_back(static_cast<TokenId>(
          Vocab::kNumSpecials + rng.below(v.size() - Vocab::kNumSpecials)));
    CHECK(encode(decode(ids, v), v) == ids);
  }
}

TEST_CASE("vocabulary construction is deterministic") {
  std::vector<std::string> corpus = {"b b a", "c a", "d d d"};
  Vocab v1 = build_vocab(corpus, 1);
  Vocab v2 = build_vocab(corpus, 1);
  REQUIRE(v1.size() == v2.size());
  for (TokenId i = 0; i < v1.size(); ++i) CHECK(v1.token(i) == v2.token(i));
}

TEST_CASE("vocab persistence round-trips bit-exactly") {
  namespace fs = std::filesystem;
  Vocab v = build_vocab({"the cat sat , on ! a mat ?"}, 1);
  fs::path dir = fs::temp_directory_path() / "mmd_vocab_test";
  fs::create_directories(dir);
  std::string path = (dir / "vocab.txt").string();
  save_vocab(v, path);
  Vocab loaded = load_vocab(path);
  REQUIRE(loaded.size() == v.size());
  for (TokenId i = 0; i < v.size(); ++i) CHECK(loaded.token(i) == v.token(i));

  // file-level: saving the loaded vocab reproduces identical bytes
  std::string path2 = (dir / "vocab2.txt").string();
  save_vocab(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  fs::remove_all(dir);
}

TEST_CASE("load_vocab validates the special block") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "mmd_vocab_bad";
  fs::create_directories(dir);
  std::string path = (dir / "bad.txt").string();
  {
    std::ofstream out(path);
    out << "nonsense\n";
  }
  CHECK_THROWS_AS(load_vocab(path), Error);
  fs::remove_all(dir);
}
