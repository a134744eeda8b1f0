#pragma once

#include "adaf/nn.hpp"
#include "adaf/rng.hpp"
#include "adaf/tape.hpp"
#include "adaf/types.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adaf {

// Fixed word-level vocabulary. Ids are line numbers in the vocab file; the
// three sentinels must be present so every id is file-determined.
struct Vocabulary {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> index;
  int bos = -1, eos = -1, oov = -1;

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("vocab: cannot open " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
      if (line.empty()) continue;
      if (v.index.count(line)) throw std::runtime_error("vocab: duplicate word " + line);
      v.index.emplace(line, static_cast<int>(v.words.size()));
      v.words.push_back(line);
    }
    auto need = [&](const char* w) {
      auto it = v.index.find(w);
      if (it == v.index.end()) throw std::runtime_error(std::string("vocab: missing ") + w);
      return it->second;
    };
    v.bos = need("<bos>");
    v.eos = need("<eos>");
    v.oov = need("<oov>");
    return v;
  }

  int lookup(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? oov : it->second;
  }

  int size() const { return static_cast<int>(words.size()); }
};

// Underscores become spaces, then lowercase whitespace-delimited words map
// through the vocabulary and get wrapped in sentinels. Words beyond
// max_len - 2 are dropped so the result always fits the positional table.
inline std::vector<int> tokenize(const Vocabulary& v, std::string_view text, int max_len = 16) {
  if (max_len < 2) throw std::invalid_argument("tokenize: max_len must be >= 2");
  std::vector<int> ids;
  ids.push_back(v.bos);
  std::string word;
  auto flush = [&] {
    if (!word.empty() && static_cast<int>(ids.size()) < max_len - 1) ids.push_back(v.lookup(word));
    word.clear();
  };
  for (char ch : text) {
    if (ch == '_' || std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  ids.push_back(v.eos);
  return ids;
}

// Attack-time prompt handling: a full sentence, the bare "_" placeholder, or
// the empty prompt.
enum class PromptMode { FixedSentence, Underscore, Empty };

struct PromptSpec {
  PromptMode mode = PromptMode::Empty;
  std::string text;

  static PromptSpec sentence(std::string s) {
    if (s.empty()) throw std::invalid_argument("prompt: fixed sentence must be non-empty");
    return {PromptMode::FixedSentence, std::move(s)};
  }
  static PromptSpec underscore() { return {PromptMode::Underscore, "_"}; }
  static PromptSpec empty() { return {PromptMode::Empty, ""}; }

  std::string realized() const {
    switch (mode) {
      case PromptMode::FixedSentence: return text;
      case PromptMode::Underscore: return "_";
      case PromptMode::Empty: return "";
    }
    return "";
  }
};

inline PromptMode parse_prompt_mode(const std::string& s) {
  if (s == "fixed_sentence") return PromptMode::FixedSentence;
  if (s == "underscore") return PromptMode::Underscore;
  if (s == "empty") return PromptMode::Empty;
  throw std::invalid_argument("prompt: unknown mode " + s);
}

// Token + positional embeddings, one gated residual mixer, rms-normalized
// output rows. Output is max_len-agnostic: rows match the token count.
template <class S>
struct TextEncoder {
  int vocab = 0, d = 0, hidden = 0, max_len = 0;
  Matrix<S> emb;  // vocab x d
  Matrix<S> pos;  // max_len x d
  Linear<S> l1, l2;
  S eps = S(1e-6);

  void init(Rng& rng, int vocab_, int d_, int hidden_, int max_len_) {
    vocab = vocab_;
    d = d_;
    hidden = hidden_;
    max_len = max_len_;
    emb = random_normal<S>(rng, vocab, d, S(0.5));
    pos = random_normal<S>(rng, max_len, d, S(0.1));
    l1.init(rng, d, hidden);
    l2.init(rng, hidden, d);
  }

  int encode(Tape<S>& t, const std::vector<int>& ids, ParamBinder<S>& bind) const {
    if (static_cast<int>(ids.size()) > max_len)
      throw std::invalid_argument("encode: sequence longer than max_len");
    std::vector<int> where(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= vocab) throw std::invalid_argument("encode: token id out of range");
      where[i] = static_cast<int>(i);
    }
    int h0 = t.add(t.gather_rows(bind(emb), ids), t.gather_rows(bind(pos), where));
    int h = t.add(h0, l2.apply(t, t.silu(l1.apply(t, h0, bind)), bind));
    return t.rms_norm_rows(h, eps);
  }

  Matrix<S> encode_value(const std::vector<int>& ids) const {
    Tape<S> t(false);
    ParamBinder<S> bind(t);
    return t.val(encode(t, ids, bind));
  }

  template <class Fn>
  void visit(const std::string& name, Fn&& fn) {
    fn(name + ".emb", emb);
    fn(name + ".pos", pos);
    l1.visit(name + ".l1", fn);
    l2.visit(name + ".l2", fn);
  }
};

// Prompt embedding carried into the attack. augmented flips once; a second
// augmentation pass is a logic error, not a parameter error.
template <class S>
struct TextEmbedding {
  Matrix<S> e;
  bool augmented = false;
};

template <class S>
TextEmbedding<S> augment_features(const TextEmbedding<S>& base, Rng& rng) {
  if (base.augmented) throw std::logic_error("augment_features: embedding already augmented");
  TextEmbedding<S> out;
  out.e = base.e + random_uniform<S>(rng, base.e.rows(), base.e.cols(), S(-1), S(1));
  out.augmented = true;
  return out;
}

}  // namespace adaf
