// vgat command-line front end.
#include <CLI11.hpp>
#include <iostream>
#include <nlohmann/json.hpp>

#include "vgat/vgat.hpp"

namespace {

using namespace vgat;

void add_train_flags(CLI::App& app, TrainConfig& c, std::string& strategy, std::string& loss, bool& no_vga,
                     std::optional<std::size_t>& top_k) {
    app.add_option("--learning-rate", c.learning_rate, "AdamW step size")->capture_default_str();
    app.add_option("--weight-decay", c.weight_decay)->capture_default_str();
    app.add_option("--epochs", c.epochs)->capture_default_str();
    app.add_option("--lambda-kl", c.lambda_kl, "weight of the reconstruction loss")->capture_default_str();
    app.add_option("--n-select", c.n_select, "N_S, visual prompts per bag")->capture_default_str();
    app.add_option("--n-tokens", c.n_tokens, "N_L, learnable query tokens")->capture_default_str();
    app.add_option("--clusters", c.clusters, "C_h, GMM components")->capture_default_str();
    app.add_option("--strategy", strategy, "em | cluster | random | none")->capture_default_str();
    app.add_option("--loss", loss, "kl | mse | l1 | cosine")->capture_default_str();
    app.add_option("--seed", c.seed)->capture_default_str();
    app.add_option("--em-iters", c.em_iters)->capture_default_str();
    app.add_option("--kmeans-iters", c.kmeans_iters)->capture_default_str();
    app.add_option("--gmm-sample-cap", c.gmm_sample_cap)->capture_default_str();
    app.add_option("--accumulate", c.accumulate, "patients per optimizer step")->capture_default_str();
    app.add_flag("--standardize-genomic", c.standardize_genomic);
    app.add_flag("--no-vga", no_vga, "bypass VGA; the head sees the pathology CLS only");
    app.add_option("--top-k", top_k, "override K of the top-K branch");
}

TrainConfig finish_config(TrainConfig c, const std::string& strategy, const std::string& loss, bool no_vga,
                          const std::optional<std::size_t>& top_k) {
    c.strategy = parse_strategy(strategy);
    c.loss = parse_loss_kind(loss);
    c.use_vga = !no_vga;
    c.top_k = top_k;
    validate(c);
    return c;
}

void echo_config(const fs::path& target, const std::string& verb, const nlohmann::json& args) {
    nlohmann::json j;
    j["verb"] = verb;
    j["args"] = args;
    fs::path path = target;
    path += ".config.json";
    detail::write_file(path, j.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VGAT survival prediction from patch-feature bags"};
    app.require_subcommand(1);

    // gen
    SyntheticConfig gen_cfg;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen", "write a synthetic cohort");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_cfg.seed)->capture_default_str();
    gen->add_option("--n-patients", gen_cfg.n_patients)->capture_default_str();
    gen->add_option("--d", gen_cfg.d)->capture_default_str();
    gen->add_option("--min-patches", gen_cfg.min_patches)->capture_default_str();
    gen->add_option("--max-patches", gen_cfg.max_patches)->capture_default_str();
    gen->add_option("--latent-clusters", gen_cfg.n_latent_clusters)->capture_default_str();

    // shared training flags
    TrainConfig cfg;
    std::string strategy = "em", loss = "kl";
    bool no_vga = false;
    std::optional<std::size_t> top_k;
    std::string manifest, out, checkpoint;
    int fold = 0;

    auto* fit = app.add_subcommand("fit-gmm", "fit k-means + GMM on one fold's training patches");
    fit->add_option("--manifest", manifest)->required();
    fit->add_option("--fold", fold)->required();
    fit->add_option("--out", out, "output prefix")->required();
    add_train_flags(*fit, cfg, strategy, loss, no_vga, top_k);

    auto* train = app.add_subcommand("train", "train one fold and write a checkpoint");
    train->add_option("--manifest", manifest)->required();
    train->add_option("--fold", fold)->required();
    train->add_option("--out", out, "checkpoint path")->required();
    add_train_flags(*train, cfg, strategy, loss, no_vga, top_k);

    std::string attention_dir, selection_dir;
    auto* eval = app.add_subcommand("eval", "visual-only evaluation of a checkpoint on its test fold");
    eval->add_option("--manifest", manifest)->required();
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--out", out, "risk table path")->required();
    eval->add_option("--attention-dir", attention_dir, "write per-patient attention tables");
    eval->add_option("--selection-dir", selection_dir, "write per-patient prompt selections");

    std::string grid = "modules";
    std::vector<std::uint64_t> seeds{0};
    auto* ablate = app.add_subcommand("ablate", "cross-validated comparison over a config grid");
    ablate->add_option("--manifest", manifest)->required();
    ablate->add_option("--grid", grid, "modules | strategy | loss")->capture_default_str();
    ablate->add_option("--seeds", seeds, "seed list")->capture_default_str();
    ablate->add_option("--out", out, "output prefix (.txt and .tsv)")->required();
    add_train_flags(*ablate, cfg, strategy, loss, no_vga, top_k);

    std::string risk_table;
    auto* km = app.add_subcommand("km", "median stratification, Kaplan-Meier curves and logrank test");
    km->add_option("--risk-table", risk_table)->required();
    km->add_option("--out", out)->required();

    std::uint64_t grad_seed = 1;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    grad->add_option("--seed", grad_seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_code(ErrorKind::config);
    }

    try {
        if (gen->parsed()) {
            fs::create_directories(gen_out);
            const SyntheticCohort s = generate_synthetic_cohort(gen_cfg, gen_out);
            echo_config(fs::path(gen_out) / "gen", "gen",
                        {{"seed", gen_cfg.seed},
                         {"n_patients", gen_cfg.n_patients},
                         {"d", gen_cfg.d},
                         {"min_patches", gen_cfg.min_patches},
                         {"max_patches", gen_cfg.max_patches},
                         {"latent_clusters", gen_cfg.n_latent_clusters}});
            std::cout << "wrote " << s.cohort.patients.size() << " patients to " << gen_out << "\n";
        } else if (fit->parsed()) {
            const TrainConfig c = finish_config(cfg, strategy, loss, no_vga, top_k);
            const Cohort cohort = load_cohort(fs::path(manifest), {.load_genomic = false});
            FoldArtifacts a;
            const auto train_idx = cohort.indices_outside_fold(fold);
            fit_selection_model(cohort, train_idx, c, mix_seed(c.seed, 100 + static_cast<std::uint64_t>(fold)), a);
            write_matrix(out + ".centroids.bin", a.centroids);
            write_matrix(out + ".gmm.bin", pack_gmm(*a.gmm));
            std::string ids;
            for (std::size_t i : train_idx) ids += cohort.patients[i].bag.sample_id + "\n";
            detail::write_file(out + ".samples.txt", ids);
            echo_config(out, "fit-gmm", {{"manifest", manifest}, {"fold", fold}, {"config", to_json(c)}});
            std::cout << "fit " << a.gmm->components() << " components on " << train_idx.size() << " patients\n";
        } else if (train->parsed()) {
            const TrainConfig c = finish_config(cfg, strategy, loss, no_vga, top_k);
            const Cohort cohort = load_cohort(fs::path(manifest));
            TrainResult r = train_fold(cohort, fold, c);
            save_checkpoint(r.checkpoint, out);
            std::string hist = "epoch\tloss\n";
            for (std::size_t e = 0; e < r.history.size(); ++e)
                hist += std::to_string(e) + "\t" + detail::format_double(r.history[e]) + "\n";
            detail::write_file(out + ".history.tsv", hist);
            echo_config(out, "train", {{"manifest", manifest}, {"fold", fold}, {"config", to_json(c)}});
            std::cout << "checkpoint " << out << " digest " << hex64(checkpoint_digest(r.checkpoint)) << "\n";
        } else if (eval->parsed()) {
            ModelCheckpoint ck = load_checkpoint(checkpoint);
            const Cohort cohort = load_cohort(fs::path(manifest), {.load_genomic = false});
            const EvalResult r = evaluate_fold(cohort, ck);
            detail::write_file(out, format_risk_table(r.rows));
            if (!attention_dir.empty() || !selection_dir.empty()) {
                for (std::size_t i : cohort.indices_in_fold(ck.fold)) {
                    const Patient& p = cohort.patients[i];
                    const RiskOutput o = forward_risk(p.bag, ck, ForwardMode::inference_visual_only);
                    if (!attention_dir.empty()) {
                        fs::create_directories(attention_dir);
                        detail::write_file(fs::path(attention_dir) / (p.bag.sample_id + ".tsv"), format_attention(o));
                    }
                    if (!selection_dir.empty()) {
                        fs::create_directories(selection_dir);
                        detail::write_file(fs::path(selection_dir) / (p.bag.sample_id + ".tsv"),
                                           format_selection(o.selection));
                    }
                }
            }
            echo_config(out, "eval", {{"manifest", manifest}, {"checkpoint", checkpoint}, {"config", to_json(ck.config)}});
            std::printf("fold %d c-index %.4f\n", ck.fold, r.c_index);
        } else if (ablate->parsed()) {
            const TrainConfig base = finish_config(cfg, strategy, loss, no_vga, top_k);
            const Cohort cohort = load_cohort(fs::path(manifest));
            std::vector<NamedConfig> configs;
            if (grid == "modules") {
                configs = modules_grid(base);
            } else if (grid == "strategy") {
                for (auto s : {SelectionStrategy::none, SelectionStrategy::random, SelectionStrategy::cluster,
                               SelectionStrategy::em}) {
                    TrainConfig c = base;
                    c.strategy = s;
                    configs.push_back({std::string(to_string(s)), c});
                }
            } else if (grid == "loss") {
                for (auto k : {ReconstructionLossKind::kl, ReconstructionLossKind::mse, ReconstructionLossKind::l1,
                               ReconstructionLossKind::cosine}) {
                    TrainConfig c = base;
                    c.loss = k;
                    configs.push_back({std::string(to_string(k)), c});
                }
            } else {
                throw Error(ErrorKind::config, "unknown grid '" + grid + "'");
            }
            const auto rows = run_ablation(cohort, configs, seeds);
            const std::string text = format_ablation_text(rows);
            detail::write_file(out + ".txt", text);
            detail::write_file(out + ".tsv", format_ablation_tsv(rows));
            echo_config(out, "ablate",
                        {{"manifest", manifest}, {"grid", grid}, {"seeds", seeds}, {"config", to_json(base)}});
            std::cout << text;
        } else if (km->parsed()) {
            const auto rows = parse_risk_table(detail::read_file(risk_table));
            const StratificationReport rep = stratify_risk_table(rows);
            detail::write_file(out, format_stratification(rep));
            echo_config(out, "km", {{"risk_table", risk_table}});
            std::printf("logrank chi2 %.4f p %.4g\n", rep.logrank.chi2, rep.logrank.p);
        } else if (grad->parsed()) {
            bool ok = true;
            for (const auto& c : run_gradient_suite(grad_seed)) {
                std::cout << c.name << ": " << c.report.summary() << "\n";
                ok = ok && c.report.passed;
            }
            return ok ? 0 : 1;
        }
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
