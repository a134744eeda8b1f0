#include "adaf/text.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <fstream>

using namespace adaf;

namespace {

Vocabulary test_vocab() { return Vocabulary::load("data/vocab.txt"); }

}  // namespace

TEST_CASE("vocabulary has sentinels and the special subject tokens") {
  Vocabulary v = test_vocab();
  CHECK(v.size() > 50);
  CHECK(v.bos == v.index.at("<bos>"));
  CHECK(v.eos == v.index.at("<eos>"));
  CHECK(v.oov == v.index.at("<oov>"));
  for (const char* w : {"sks", "t@t", "rjq", "ajwerq", "person", "photo", "id00", "id31"})
    CHECK(v.index.count(w) == 1);
}

TEST_CASE("vocabulary loading rejects duplicates and missing sentinels") {
  {
    std::ofstream f("/tmp/adaf_vocab_dup.txt");
    f << "<bos>\n<eos>\n<oov>\na\na\n";
  }
  CHECK_THROWS_AS(Vocabulary::load("/tmp/adaf_vocab_dup.txt"), std::runtime_error);
  {
    std::ofstream f("/tmp/adaf_vocab_nosent.txt");
    f << "a\nb\n";
  }
  CHECK_THROWS_AS(Vocabulary::load("/tmp/adaf_vocab_nosent.txt"), std::runtime_error);
  CHECK_THROWS_AS(Vocabulary::load("/tmp/adaf_no_such_vocab.txt"), std::runtime_error);
}

TEST_CASE("tokenize: case folding, sentinels, OOV bucket") {
  Vocabulary v = test_vocab();
  auto ids = tokenize(v, "A Photo OF sks PERSON", 16);
  REQUIRE(ids.size() == 7);
  CHECK(ids.front() == v.bos);
  CHECK(ids.back() == v.eos);
  CHECK(ids[1] == v.index.at("a"));
  CHECK(ids[4] == v.index.at("sks"));
  auto oov = tokenize(v, "zzzqqq photo", 16);
  CHECK(oov[1] == v.oov);
  CHECK(oov[2] == v.index.at("photo"));
}

TEST_CASE("tokenize treats underscores as whitespace") {
  Vocabulary v = test_vocab();
  CHECK(tokenize(v, "_x_y_", 16) == tokenize(v, " x y ", 16));
  CHECK(tokenize(v, "a_photo_of_sks_person", 16) == tokenize(v, "a photo of sks person", 16));
  // a lone underscore is an empty prompt
  std::vector<int> empty = {v.bos, v.eos};
  CHECK(tokenize(v, "_", 16) == empty);
  CHECK(tokenize(v, "", 16) == empty);
  CHECK(tokenize(v, "   ", 16) == empty);
}

TEST_CASE("tokenize truncates to max_len keeping sentinels") {
  Vocabulary v = test_vocab();
  std::string longp = "a photo of sks person a photo of sks person a photo of sks person";
  auto ids = tokenize(v, longp, 8);
  REQUIRE(ids.size() == 8);
  CHECK(ids.front() == v.bos);
  CHECK(ids.back() == v.eos);
}

TEST_CASE("prompt spec realizes the three modes") {
  PromptSpec fixed = PromptSpec::sentence("a photo of sks person");
  CHECK(fixed.realized() == "a photo of sks person");
  CHECK(PromptSpec::underscore().realized() == "_");
  CHECK(PromptSpec::empty().realized() == "");
  Vocabulary v = test_vocab();
  // underscore and empty prompts agree after normalization
  CHECK(tokenize(v, PromptSpec::underscore().realized(), 16) ==
        tokenize(v, PromptSpec::empty().realized(), 16));
  CHECK(parse_prompt_mode("fixed_sentence") == PromptMode::FixedSentence);
  CHECK(parse_prompt_mode("underscore") == PromptMode::Underscore);
  CHECK(parse_prompt_mode("empty") == PromptMode::Empty);
  CHECK_THROWS_AS(parse_prompt_mode("nope"), std::invalid_argument);
}

TEST_CASE("text encoder: deterministic, prompt-sensitive, correct shape") {
  Vocabulary v = test_vocab();
  Rng rng(9);
  TextEncoder<Real> te;
  te.init(rng, v.size(), 8, 16, 16);
  auto a1 = te.encode_value(tokenize(v, "a photo of sks person", 16));
  auto a2 = te.encode_value(tokenize(v, "a photo of sks person", 16));
  auto b = te.encode_value(tokenize(v, "a photo of rjq person", 16));
  CHECK(a1.rows() == 7);
  CHECK(a1.cols() == 8);
  CHECK(adaf_test::rel_err(a1, a2) == 0.0);
  CHECK((a1 - b).norm() > 1e-6);
}

TEST_CASE("feature augmentation is single-shot and bounded") {
  Rng rng(4);
  TextEmbedding<Real> e;
  e.e = Matrix<Real>::Zero(3, 4);
  TextEmbedding<Real> aug = augment_features(e, rng);
  CHECK(aug.augmented);
  CHECK(aug.e.minCoeff() >= -1.0);
  CHECK(aug.e.maxCoeff() <= 1.0);
  CHECK((aug.e.array() != 0.0).any());
  CHECK_THROWS_AS(augment_features(aug, rng), std::logic_error);
}
