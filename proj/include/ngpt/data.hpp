#pragma once

// Byte-level corpus: every byte is a token in [0, 256).

#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

namespace ngpt {

struct Corpus {
  std::vector<int> train;
  std::vector<int> validation;
};

/// Splits off the last round(n * val_fraction) tokens as validation.
Corpus corpus_from_bytes(std::string_view bytes, double val_fraction = 0.1);

/// Reads a file as bytes. Throws IoError if unreadable, DegenerateInputError
/// if empty.
Corpus load_corpus(const std::filesystem::path& path, double val_fraction = 0.1);

struct Batch {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;
};

/// Contiguous windows of seq + 1 tokens read in order, wrapping to the start
/// when the stream runs out.
class BatchStream {
 public:
  BatchStream(const std::vector<int>& tokens, int batch, int seq, bool wraparound = true);

  Batch next();
  std::size_t cursor() const { return cursor_; }

 private:
  const std::vector<int>* tokens_;
  std::size_t batch_, seq_;
  bool wrap_;
  std::size_t cursor_ = 0;
};

}  // namespace ngpt
