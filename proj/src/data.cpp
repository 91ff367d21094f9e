#include "ngpt/data.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "ngpt/errors.hpp"

namespace ngpt {

Corpus corpus_from_bytes(std::string_view bytes, double val_fraction) {
  if (bytes.empty()) throw DegenerateInputError("corpus is empty");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0, 1)");
  const auto n = bytes.size();
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  Corpus c;
  c.train.reserve(n - n_val);
  c.validation.reserve(n_val);
  for (std::size_t i = 0; i < n; ++i) {
    const int t = static_cast<unsigned char>(bytes[i]);
    (i < n - n_val ? c.train : c.validation).push_back(t);
  }
  return c;
}

Corpus load_corpus(const std::filesystem::path& path, double val_fraction) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw DegenerateInputError("corpus " + path.string() + " is empty");
  return corpus_from_bytes(bytes, val_fraction);
}

BatchStream::BatchStream(const std::vector<int>& tokens, int batch, int seq, bool wraparound)
    : tokens_(&tokens), batch_(static_cast<std::size_t>(batch)), seq_(static_cast<std::size_t>(seq)),
      wrap_(wraparound) {
  if (batch < 1 || seq < 1) throw ConfigError("batch and seq must be >= 1");
  if (tokens.size() < seq_ + 1) {
    throw DegenerateInputError("token stream of " + std::to_string(tokens.size()) +
                               " is shorter than one window of " + std::to_string(seq_ + 1));
  }
}

Batch BatchStream::next() {
  const auto& t = *tokens_;
  Batch b;
  for (std::size_t k = 0; k < batch_; ++k) {
    if (!wrap_ && cursor_ + seq_ + 1 > t.size()) throw IoError("corpus exhausted");
    std::vector<int> in(seq_), out(seq_);
    for (std::size_t i = 0; i < seq_; ++i) {
      in[i] = t[(cursor_ + i) % t.size()];
      out[i] = t[(cursor_ + i + 1) % t.size()];
    }
    b.inputs.push_back(std::move(in));
    b.targets.push_back(std::move(out));
    cursor_ += seq_;
    if (wrap_) cursor_ %= t.size();
  }
  return b;
}

}  // namespace ngpt
