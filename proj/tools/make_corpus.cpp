// Generates a deterministic plain-text corpus for the training demos, so
// experiments run without downloading anything.
#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "smamba/corpus_gen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"deterministic demo corpus generator"};
  std::string out_path;
  std::uint64_t seed = 1;
  std::size_t bytes = 2000000;
  app.add_option("--out", out_path, "output file")->required();
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--bytes", bytes, "minimum size in bytes");
  CLI11_PARSE(app, argc, argv);

  const std::string text = smamba::generate_corpus(seed, bytes);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "cannot open " << out_path << "\n";
    return 1;
  }
  out << text;
  std::cout << "wrote " << text.size() << " bytes to " << out_path << "\n";
  return 0;
}
