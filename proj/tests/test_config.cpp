#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "somn/config.hpp"

using namespace somn;

TEST_CASE("an empty config resolves to the published hyperparameter defaults") {
    RunConfig cfg = parse_run_config("{}");
    CHECK(cfg.meta.n_tasks == 32);
    CHECK(cfg.meta.n_in == 1);
    CHECK(cfg.meta.lambda_out == 1e-4);
    CHECK(cfg.meta.lambda_in == 5e-5);
    CHECK(cfg.meta.task_size == 8);
    CHECK(cfg.meta.training_epochs == 20);
    CHECK(cfg.meta.smoothing == 0.1);
    CHECK(cfg.meta.mode == TrainMode::kS2Maml);
    CHECK(cfg.meta.inner_opt == OptKind::kSgd);
    CHECK(cfg.meta.outer_opt == OptKind::kAdam);
    CHECK(cfg.eval.folds == 4);
    CHECK(cfg.eval.ratio == 0.75);
    CHECK(cfg.eval.one_vs_all_updates == 5000);
    CHECK(cfg.eval.lambda_sweep == std::vector<double>{1e-3, 5e-5});
    CHECK(cfg.prep.target_hz == 102.4);
    CHECK(cfg.prep.n_channels == 9);
    CHECK(cfg.synth.n_datasets == 5);
    CHECK(cfg.synth.subjects_per_dataset == 8);
    CHECK(cfg.synth.recordings_per_subject == 2);
    CHECK(cfg.synth.minutes_per_recording == 20.0);
    CHECK(cfg.model.dropout == 0.5);
    CHECK(cfg.model.feature_dim() > 0);
}

TEST_CASE("unknown keys are rejected with their full path") {
    try {
        parse_run_config(R"({"meta": {"bogus_rate": 1}})");
        FAIL("expected UsageError");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("meta.bogus_rate") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_run_config(R"({"nonsense": {}})"), UsageError);
    CHECK_THROWS_AS(parse_run_config(R"({"prep": {"rate": 100}})"), UsageError);
    CHECK_THROWS_AS(parse_run_config("not json"), UsageError);
}

TEST_CASE("section values override the defaults") {
    RunConfig cfg = parse_run_config(R"({
        "meta": {"n_tasks": 4, "mode": "maml", "outer_opt": "sgd"},
        "model": {"preset": "compact"},
        "eval": {"protocol": "all_vs_all", "folds": 1, "seeds": [3, 4]},
        "synth": {"n_datasets": 2, "classes": [
            {"band_lo": 8, "band_hi": 12, "amplitude": 2.0, "broadband": 1.0},
            {"band_lo": 4, "band_hi": 7, "amplitude": 1.0, "broadband": 1.0},
            {"band_lo": 12, "band_hi": 15, "amplitude": 1.0, "broadband": 1.0},
            {"band_lo": 0.5, "band_hi": 3, "amplitude": 1.0, "broadband": 1.0},
            {"band_lo": 5, "band_hi": 7, "amplitude": 1.0, "broadband": 2.0}]}
    })");
    CHECK(cfg.meta.n_tasks == 4);
    CHECK(cfg.meta.mode == TrainMode::kMaml);
    CHECK(cfg.meta.outer_opt == OptKind::kSgd);
    CHECK(cfg.model.small_branch[0].kernel == EncoderConfig::compact().small_branch[0].kernel);
    CHECK(cfg.eval.protocol == Protocol::kAllVsAll);
    CHECK(cfg.eval.seeds == std::vector<uint64_t>{3, 4});
    CHECK(cfg.synth.n_datasets == 2);
    CHECK(cfg.synth.classes[0].amplitude == 2.0);
    // The experiment config inherits the meta/model sections.
    CHECK(cfg.eval.meta.n_tasks == 4);
    CHECK(cfg.eval.model.small_branch[0].kernel ==
          EncoderConfig::compact().small_branch[0].kernel);
}

TEST_CASE("flag overrides rewrite nested keys before parsing") {
    std::vector<std::string> sets = {"meta.n_tasks=8", "output.dir=elsewhere",
                                     "meta.mode=sl", "synth.noise_level=0.25"};
    std::string text = apply_config_overrides("{}", sets);
    RunConfig cfg = parse_run_config(text);
    CHECK(cfg.meta.n_tasks == 8);
    CHECK(cfg.meta.mode == TrainMode::kSl);
    CHECK(cfg.output.dir == "elsewhere");
    CHECK(cfg.synth.noise_level == 0.25);

    CHECK_THROWS_AS(apply_config_overrides("{}", std::vector<std::string>{"no-equals"}),
                    UsageError);
}

TEST_CASE("the defaults snapshot round-trips through serialization") {
    RunConfig cfg = parse_run_config("{}");
    std::string snapshot = run_config_to_json(cfg);
    RunConfig back = parse_run_config(snapshot);
    CHECK(back.meta.n_tasks == cfg.meta.n_tasks);
    CHECK(back.meta.lambda_in == cfg.meta.lambda_in);
    CHECK(back.meta.lambda_out == cfg.meta.lambda_out);
    CHECK(back.model.feature_dim() == cfg.model.feature_dim());
    CHECK(back.synth.classes[4].broadband == cfg.synth.classes[4].broadband);
    CHECK(back.eval.protocol == cfg.eval.protocol);
    // A snapshot parses without unknown-key complaints: every emitted key is
    // a legal input key.
}
