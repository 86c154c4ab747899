// Serial reference vs OpenMP batch loss kernel on the default benchmark.

#include <vector>

#include <benchmark/benchmark.h>

#include "gfl/detector.hpp"
#include "gfl/synth.hpp"

namespace {

struct Fixture {
    std::vector<gfl::Scene> scenes;
    std::vector<gfl::Assignment> assignments;
    std::vector<const gfl::Scene*> scene_ptrs;
    std::vector<const gfl::Assignment*> assignment_ptrs;
    gfl::HeadParams params;

    Fixture(gfl::HeadMode mode, int batch)
    {
        gfl::SceneSpec spec;
        spec.seed = 7;
        scenes = gfl::generate(spec, batch);
        for (const gfl::Scene& s : scenes) {
            assignments.push_back(gfl::assign(s));
        }
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            scene_ptrs.push_back(&scenes[i]);
            assignment_ptrs.push_back(&assignments[i]);
        }
        gfl::TrainConfig cfg;
        cfg.mode = mode;
        params = gfl::init_params(gfl::head_shape(cfg, scenes.front(), spec.num_classes), 11);
    }
};

template <bool Parallel>
void BM_BatchLoss(benchmark::State& state)
{
    const auto mode = state.range(0) == 0 ? gfl::HeadMode::Tabular : gfl::HeadMode::Mlp;
    const Fixture f(mode, static_cast<int>(state.range(1)));
    const gfl::LossConfig loss;
    for (auto _ : state) {
        gfl::LossResult r = Parallel ? gfl::batch_loss_parallel(f.params, f.scene_ptrs, f.assignment_ptrs, loss)
                                     : gfl::batch_loss_serial(f.params, f.scene_ptrs, f.assignment_ptrs, loss);
        benchmark::DoNotOptimize(r.grad.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(1));
}

}   // namespace

BENCHMARK_TEMPLATE(BM_BatchLoss, false)->ArgsProduct({{0, 1}, {8, 32}})->ArgNames({"mlp", "batch"});
BENCHMARK_TEMPLATE(BM_BatchLoss, true)->ArgsProduct({{0, 1}, {8, 32}})->ArgNames({"mlp", "batch"});

BENCHMARK_MAIN();
