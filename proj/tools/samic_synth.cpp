// Writes the synthetic shapes benchmark used by the test suite and the examples.

#include "samic/dataset.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  samic::SyntheticConfig cfg;
  std::filesystem::path out;
  CLI::App app{"Generate the synthetic shapes benchmark", "samic-synth"};
  app.add_option("--out", out, "Dataset root")->required();
  app.add_option("--classes", cfg.classes, "Number of classes")->capture_default_str();
  app.add_option("--per-class", cfg.images_per_class, "Images per class")->capture_default_str();
  app.add_option("--height", cfg.height, "Image height")->capture_default_str();
  app.add_option("--width", cfg.width, "Image width")->capture_default_str();
  app.add_option("--folds", cfg.folds, "Class folds")->capture_default_str();
  app.add_option("--test-fold", cfg.test_fold, "Fold whose classes form the test split")->capture_default_str();
  app.add_option("--max-distractors", cfg.max_distractors, "Distractor objects per image")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Generator seed")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    const auto index = samic::generate_synthetic_dataset(out, cfg);
    std::cout << index.items.size() << " items, " << index.classes.size() << " classes -> "
              << (out / "manifest.json").string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "samic-synth: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
