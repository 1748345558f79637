// Trains the tiny Bi-Real net on the bundled 8x8 digits, saves it, reloads it
// and checks the reloaded model scores the same.

#include <iostream>

#include "bireal/bireal.hpp"

using namespace bireal;

int main(int argc, char** argv) {
    const std::string dir = BIREAL_DATA_DIR "/digits/";
    const auto data = load_idx(dir + "digits-images-idx3-ubyte", dir + "digits-labels-idx1-ubyte");
    const auto [train, val] = split_holdout(data, 0.2, 7);
    const auto spec = fit_spec_to_data(preset("tiny"), data);

    TrainConfig cfg;
    cfg.pretrain_epochs = 5;
    cfg.epochs = 5;
    cfg.lr = 0.05;
    const auto result = run_training(spec, train, val, cfg);
    print_run_summary(std::cout, result.report);

    const std::string path = argc > 1 ? argv[1] : "tiny-digits.brm";
    save_model(result.net, path);
    const auto again = evaluate(load_model(path), val);
    std::cout << "reloaded " << path << ": top-1 " << again.top1 << "\n";

    print_cost_table(std::cout, analyze(spec));
    return again.top1 == result.report.final_eval.top1 ? 0 : 1;
}
