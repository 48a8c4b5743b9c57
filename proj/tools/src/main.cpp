// Operator CLI: every subcommand is a thin adapter over one library call.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmz/ar_prior.hpp"
#include "dmz/checkpoint.hpp"
#include "dmz/config.hpp"
#include "dmz/data.hpp"
#include "dmz/diffusion.hpp"
#include "dmz/errors.hpp"
#include "dmz/image_io.hpp"
#include "dmz/latent_tools.hpp"
#include "dmz/metrics.hpp"
#include "dmz/sampler.hpp"
#include "dmz/serialize.hpp"
#include "dmz/trainer.hpp"
#include "dmz/translate.hpp"

namespace fs = std::filesystem;
using namespace dmz;

namespace {

uint64_t resolve_seed(const std::optional<uint64_t>& flag) {
    if (flag) return *flag;
    return std::random_device{}();
}

void log_seed(uint64_t seed) { std::cout << "seed = " << seed << "\n"; }

train::TrainConfig resolve_config(const std::string& config_path,
                                  const std::vector<std::string>& sets,
                                  train::TrainConfig cfg = {}) {
    if (!config_path.empty()) io::apply_config(cfg, io::load_kv_file(config_path));
    std::map<std::string, std::string> overrides;
    for (const auto& s : sets) {
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + s + "'");
        overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    io::apply_config(cfg, overrides);
    cfg.validate();
    return cfg;
}

void log_config(const train::TrainConfig& cfg, const std::string& out_dir) {
    std::string text = io::config_to_kv_text(cfg);
    std::cout << "resolved config:\n" << text;
    if (!out_dir.empty())
        io::write_file_atomic((fs::path(out_dir) / "resolved_config.txt").string(),
                              text);
}

Tensor load_images(const std::string& path) {
    Tensor t = io::load_tensor(path);
    if (t.shape.size() != 4)
        throw DataError("images file must hold a (B,C,H,W) tensor: " + path);
    return t;
}

// z-source spec: bernoulli | ar:<prior.json> | posterior:<codes file>
Tensor resolve_codes(const std::string& z_source, int n_bits, int64_t count,
                     Rng& rng) {
    if (z_source == "bernoulli")
        return latent::sample_prior_bernoulli_batch(count, n_bits, rng);
    if (z_source.rfind("ar:", 0) == 0) {
        latent::ARPrior prior = io::load_ar_prior(z_source.substr(3));
        if (prior.n_bits != n_bits)
            throw ConfigError("prior has " + std::to_string(prior.n_bits) +
                              " bits, model wants " + std::to_string(n_bits));
        return latent::sample_ar_prior_batch(prior, count, rng);
    }
    if (z_source.rfind("posterior:", 0) == 0) {
        Tensor codes = io::load_codes(z_source.substr(10));
        if (codes.shape[1] != n_bits)
            throw ConfigError("codes file has " + std::to_string(codes.shape[1]) +
                              " bits, model wants " + std::to_string(n_bits));
        if (codes.shape[0] < count)
            throw DataError("codes file has fewer rows than --count");
        Tensor out = Tensor::zeros({count, n_bits});
        std::copy_n(codes.data.begin(), static_cast<size_t>(count * n_bits),
                    out.data.begin());
        return out;
    }
    throw ConfigError("unknown z-source '" + z_source +
                      "' (expected bernoulli, ar:<path> or posterior:<path>)");
}

Tensor one_code_row(const Tensor& codes, int64_t index) {
    if (index < 0 || index >= codes.shape[0])
        throw IndexError("code index " + std::to_string(index) +
                         " out of range for " + std::to_string(codes.shape[0]) +
                         " rows");
    Tensor row = Tensor::zeros({codes.shape[1]});
    std::copy_n(codes.data.begin() + index * codes.shape[1], codes.shape[1],
                row.data.begin());
    return row;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()),
                                rows[0].shape[0]});
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].data.begin(), rows[i].data.end(),
                  out.data.begin() + static_cast<int64_t>(i) * rows[0].shape[0]);
    return out;
}

void write_report(const std::string& out, const std::string& text) {
    std::cout << text;
    if (!out.empty()) io::write_file_atomic(out, text);
}

struct CommonFlags {
    std::string config;
    std::vector<std::string> sets;
    std::optional<uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_config = true) {
    if (with_config) {
        cmd->add_option("--config", f.config, "flat key = value config file");
        cmd->add_option("--set", f.sets, "config override, key=value")
            ->take_all();
    }
    cmd->add_option("--seed", f.seed, "RNG seed (default: random, logged)");
    cmd->add_option("--out", f.out, "output directory or file");
}

int run(int argc, char** argv) {
    CLI::App app{"dmz: binary-latent diffusion models"};
    app.require_subcommand(1);

    // --- gen-data ---------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    CommonFlags gen_f;
    int64_t gen_count = 512, gen_res = 8;
    bool gen_paired = false;
    gen->add_option("--count", gen_count, "number of images");
    gen->add_option("--resolution", gen_res, "square image size");
    gen->add_flag("--paired", gen_paired, "emit paired outline/filled domains");
    add_common(gen, gen_f, false);
    gen->callback([&] {
        uint64_t seed = resolve_seed(gen_f.seed);
        log_seed(seed);
        if (gen_f.out.empty()) throw ConfigError("gen-data needs --out <dir>");
        data::SyntheticSpec spec{gen_res, gen_count, seed};
        if (gen_paired) {
            auto [src, tgt] = data::generate_paired_domains(spec);
            io::save_tensor(src.images, (fs::path(gen_f.out) / "src_images.raw").string());
            io::save_tensor(tgt.images, (fs::path(gen_f.out) / "tgt_images.raw").string());
            data::save_labels(src, (fs::path(gen_f.out) / "labels.csv").string());
        } else {
            auto d = data::generate_synthetic(spec);
            io::save_tensor(d.images, (fs::path(gen_f.out) / "images.raw").string());
            data::save_labels(d, (fs::path(gen_f.out) / "labels.csv").string());
            io::export_images(d.images, 16, (fs::path(gen_f.out) / "preview.pgm").string());
        }
        std::cout << "wrote dataset to " << gen_f.out << "\n";
    });

    // --- train ------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a model from scratch");
    CommonFlags tr_f;
    std::string tr_data;
    tr->add_option("--data", tr_data, "images tensor file")->required();
    add_common(tr, tr_f);
    tr->callback([&] {
        train::TrainConfig cfg = resolve_config(tr_f.config, tr_f.sets);
        if (tr_f.seed) cfg.seed = *tr_f.seed;
        log_seed(cfg.seed);
        log_config(cfg, tr_f.out);
        Tensor images = load_images(tr_data);
        auto state = train::init_model(cfg);
        auto result = train::fit(images, *state, tr_f.out);
        std::cout << "final loss = " << result.losses.back() << "\n";
        if (!result.checkpoint_path.empty())
            std::cout << "checkpoint = " << result.checkpoint_path << "\n";
    });

    // --- finetune -----------------------------------------------------------
    auto* ft = app.add_subcommand("finetune",
                                  "add latent conditioning to a checkpoint");
    CommonFlags ft_f;
    std::string ft_base, ft_data, ft_mode = "all";
    ft->add_option("--base", ft_base, "unconditional checkpoint")->required();
    ft->add_option("--data", ft_data, "images tensor file")->required();
    ft->add_option("--mode", ft_mode, "all | new (freeze copied weights)")
        ->check(CLI::IsMember({"all", "new"}));
    add_common(ft, ft_f);
    ft->callback([&] {
        auto base = io::load_checkpoint(ft_base);
        train::TrainConfig cfg = resolve_config(ft_f.config, ft_f.sets, base->cfg);
        if (ft_f.seed) cfg.seed = *ft_f.seed;
        log_seed(cfg.seed);
        log_config(cfg, ft_f.out);
        auto state = train::prepare_finetune(
            *base, cfg,
            ft_mode == "all" ? train::FinetuneMode::all_params
                             : train::FinetuneMode::new_params_only);
        Tensor images = load_images(ft_data);
        auto result = train::fit(images, *state, ft_f.out);
        std::cout << "final loss = " << result.losses.back() << "\n";
    });

    // --- sample -------------------------------------------------------------
    auto* sa = app.add_subcommand("sample", "draw images from a checkpoint");
    CommonFlags sa_f;
    std::string sa_ckpt, sa_zsource = "bernoulli";
    int64_t sa_count = 16;
    int sa_tsub = 0;
    sa->add_option("--ckpt", sa_ckpt, "checkpoint file")->required();
    sa->add_option("--count", sa_count, "number of samples");
    sa->add_option("--t-sub", sa_tsub, "strided steps (default: full schedule)");
    sa->add_option("--z-source", sa_zsource,
                   "bernoulli | ar:<prior> | posterior:<codes>");
    add_common(sa, sa_f, false);
    sa->callback([&] {
        uint64_t seed = resolve_seed(sa_f.seed);
        log_seed(seed);
        if (sa_f.out.empty()) throw ConfigError("sample needs --out <dir>");
        auto state = io::load_checkpoint(sa_ckpt);
        int t_sub = sa_tsub > 0 ? sa_tsub : state->cfg.T;
        Rng rng(seed);
        Tensor codes;
        if (state->conditional()) {
            codes = resolve_codes(sa_zsource, state->cfg.n_bits, sa_count, rng);
            io::save_codes(codes, (fs::path(sa_f.out) / "codes.bin").string());
        }
        Tensor images = sampler::sample_batch(*state, codes, sa_count, t_sub, rng);
        io::export_images(images, 8, (fs::path(sa_f.out) / "samples.pgm").string());
        std::cout << "wrote " << sa_count << " samples to " << sa_f.out << "\n";
    });

    // --- encode -------------------------------------------------------------
    auto* en = app.add_subcommand("encode", "posterior codes for a dataset");
    CommonFlags en_f;
    std::string en_ckpt, en_data;
    en->add_option("--ckpt", en_ckpt, "checkpoint file")->required();
    en->add_option("--data", en_data, "images tensor file")->required();
    add_common(en, en_f, false);
    en->callback([&] {
        uint64_t seed = resolve_seed(en_f.seed);
        log_seed(seed);
        if (en_f.out.empty()) throw ConfigError("encode needs --out <file>");
        auto state = io::load_checkpoint(en_ckpt);
        if (!state->conditional())
            throw ConfigError("encode: checkpoint has no encoder");
        Tensor images = load_images(en_data);
        latent::LatentCode z = state->encoder->encode_hard(images);
        if (state->cfg.latent_kind == latent::LatentKind::binary)
            io::save_codes(z.values, en_f.out);
        else
            io::save_tensor(z.values, en_f.out);
        std::cout << "wrote " << images.shape[0] << " codes to " << en_f.out << "\n";
    });

    // --- interpolate ----------------------------------------------------------
    auto* in = app.add_subcommand("interpolate",
                                  "walk between two codes bit by bit");
    CommonFlags in_f;
    std::string in_ckpt, in_codes;
    int64_t in_src = 0, in_tgt = 1;
    int in_tsub = 0;
    in->add_option("--ckpt", in_ckpt, "checkpoint file")->required();
    in->add_option("--codes", in_codes, "codes file")->required();
    in->add_option("--src", in_src, "source row");
    in->add_option("--tgt", in_tgt, "target row");
    in->add_option("--t-sub", in_tsub, "strided steps");
    add_common(in, in_f, false);
    in->callback([&] {
        uint64_t seed = resolve_seed(in_f.seed);
        log_seed(seed);
        if (in_f.out.empty()) throw ConfigError("interpolate needs --out <dir>");
        auto state = io::load_checkpoint(in_ckpt);
        Tensor codes = io::load_codes(in_codes);
        Rng rng(seed);
        auto path = tools::interpolate_discrete(one_code_row(codes, in_src),
                                                one_code_row(codes, in_tgt), rng);
        Tensor z = stack_rows(path);
        int t_sub = in_tsub > 0 ? in_tsub : state->cfg.T;
        Tensor images = sampler::sample_batch(*state, z, z.shape[0], t_sub, rng);
        io::save_codes(z, (fs::path(in_f.out) / "path_codes.bin").string());
        io::export_images(images, static_cast<int>(z.shape[0]),
                          (fs::path(in_f.out) / "path.pgm").string());
        std::cout << "path length = " << z.shape[0] << "\n";
    });

    // --- edit ----------------------------------------------------------------
    auto* ed = app.add_subcommand("edit", "move a code across a probe boundary");
    CommonFlags ed_f;
    std::string ed_ckpt, ed_codes, ed_probe, ed_deltas = "-2,-1,0,1,2";
    int64_t ed_index = 0;
    int ed_tsub = 0;
    bool ed_binarize = false;
    ed->add_option("--ckpt", ed_ckpt, "checkpoint file")->required();
    ed->add_option("--codes", ed_codes, "codes file")->required();
    ed->add_option("--probe", ed_probe, "probe JSON file")->required();
    ed->add_option("--index", ed_index, "code row to edit");
    ed->add_option("--deltas", ed_deltas, "comma separated step sizes");
    ed->add_flag("--binarize", ed_binarize, "threshold edited codes at 0.5");
    ed->add_option("--t-sub", ed_tsub, "strided steps");
    add_common(ed, ed_f, false);
    ed->callback([&] {
        uint64_t seed = resolve_seed(ed_f.seed);
        log_seed(seed);
        if (ed_f.out.empty()) throw ConfigError("edit needs --out <dir>");
        auto state = io::load_checkpoint(ed_ckpt);
        Tensor codes = io::load_codes(ed_codes);
        tools::LinearProbe probe = io::load_probe(ed_probe);
        std::vector<double> deltas;
        std::istringstream ss(ed_deltas);
        std::string cell;
        while (std::getline(ss, cell, ',')) deltas.push_back(std::stod(cell));
        auto edited = tools::classifier_translate(one_code_row(codes, ed_index),
                                                  probe, deltas, ed_binarize);
        Tensor z = stack_rows(edited);
        Rng rng(seed);
        int t_sub = ed_tsub > 0 ? ed_tsub : state->cfg.T;
        Tensor images = sampler::sample_batch(*state, z, z.shape[0], t_sub, rng);
        io::save_tensor(z, (fs::path(ed_f.out) / "edited_codes.raw").string());
        io::export_images(images, static_cast<int>(z.shape[0]),
                          (fs::path(ed_f.out) / "edits.pgm").string());
        std::cout << "wrote " << deltas.size() << " edits to " << ed_f.out << "\n";
    });

    // --- translate -------------------------------------------------------------
    auto* tl = app.add_subcommand("translate",
                                  "map images through two latent spaces");
    CommonFlags tl_f;
    std::string tl_src, tl_tgt, tl_map, tl_data, tl_ref;
    int tl_tsub = 0;
    tl->add_option("--src-ckpt", tl_src, "source-domain checkpoint")->required();
    tl->add_option("--tgt-ckpt", tl_tgt, "target-domain checkpoint")->required();
    tl->add_option("--map", tl_map, "latent map JSON file")->required();
    tl->add_option("--data", tl_data, "source images tensor file")->required();
    tl->add_option("--reference", tl_ref, "paired target images, for MSE");
    tl->add_option("--t-sub", tl_tsub, "strided steps");
    add_common(tl, tl_f, false);
    tl->callback([&] {
        uint64_t seed = resolve_seed(tl_f.seed);
        log_seed(seed);
        if (tl_f.out.empty()) throw ConfigError("translate needs --out <dir>");
        auto src = io::load_checkpoint(tl_src);
        auto tgt = io::load_checkpoint(tl_tgt);
        auto map = io::load_latent_map(tl_map);
        Tensor images = load_images(tl_data);
        Rng rng(seed);
        int t_sub = tl_tsub > 0 ? tl_tsub : tgt->cfg.T;
        Tensor translated =
            translate::translate_image(images, *src, *tgt, *map, t_sub, rng);
        io::export_images(images, 8, (fs::path(tl_f.out) / "source.pgm").string());
        io::export_images(translated, 8,
                          (fs::path(tl_f.out) / "translated.pgm").string());
        if (!tl_ref.empty()) {
            Tensor ref = load_images(tl_ref);
            check_same_shape(ref, translated, "translate --reference");
            double se = 0.0;
            for (size_t i = 0; i < ref.data.size(); ++i) {
                double d = ref.data[i] - translated.data[i];
                se += d * d;
            }
            std::cout << "paired mse = " << se / static_cast<double>(ref.data.size())
                      << "\n";
        }
        std::cout << "wrote translations to " << tl_f.out << "\n";
    });

    // --- probe ----------------------------------------------------------------
    auto* pr = app.add_subcommand("probe", "fit a linear probe on codes");
    CommonFlags pr_f;
    std::string pr_codes, pr_labels, pr_factor = "shape";
    pr->add_option("--codes", pr_codes, "codes file")->required();
    pr->add_option("--labels", pr_labels, "labels CSV")->required();
    pr->add_option("--factor", pr_factor, "shape | fill | position")
        ->check(CLI::IsMember({"shape", "fill", "position"}));
    add_common(pr, pr_f, false);
    pr->callback([&] {
        uint64_t seed = resolve_seed(pr_f.seed);
        log_seed(seed);
        Tensor codes = io::load_codes(pr_codes);
        auto rows = data::load_labels(pr_labels);
        if (static_cast<int64_t>(rows.size()) != codes.shape[0])
            throw DataError("labels row count != codes row count");
        int col = pr_factor == "shape" ? 1 : pr_factor == "fill" ? 2 : 3;
        std::vector<int> labels;
        for (const auto& r : rows) labels.push_back(r[static_cast<size_t>(col)]);
        auto [probe, metrics] = tools::fit_linear_probe(codes, labels, seed);
        std::ostringstream report;
        report << "factor = " << pr_factor << "\n"
               << "accuracy = " << metrics.accuracy << "\n"
               << "auroc = " << metrics.auroc << "\n";
        std::cout << report.str();
        if (!pr_f.out.empty()) io::save_probe(probe, pr_f.out);
    });

    // --- eval -----------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "quantitative metrics");
    CommonFlags ev_f;
    std::string ev_metric, ev_a, ev_b, ev_ckpt, ev_data, ev_codes;
    int ev_tsub = 0;
    ev->add_option("--metric", ev_metric,
                   "frechet_proxy | reconstruction_mse | nll_bpd | latent_usage")
        ->required()
        ->check(CLI::IsMember({"frechet_proxy", "reconstruction_mse", "nll_bpd",
                               "latent_usage"}));
    ev->add_option("--a", ev_a, "first sample tensor (frechet_proxy)");
    ev->add_option("--b", ev_b, "second sample tensor (frechet_proxy)");
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file");
    ev->add_option("--data", ev_data, "images tensor file");
    ev->add_option("--codes", ev_codes, "codes file (latent_usage)");
    ev->add_option("--t-sub", ev_tsub, "strided steps");
    add_common(ev, ev_f, false);
    ev->callback([&] {
        uint64_t seed = resolve_seed(ev_f.seed);
        log_seed(seed);
        std::ostringstream report;
        report.precision(12);
        report << "metric = " << ev_metric << "\nseed = " << seed << "\n";
        if (ev_metric == "frechet_proxy") {
            if (ev_a.empty() || ev_b.empty())
                throw ConfigError("frechet_proxy needs --a and --b");
            Tensor a = io::load_tensor(ev_a);
            Tensor b = io::load_tensor(ev_b);
            report << "count_a = " << a.shape[0] << "\ncount_b = " << b.shape[0]
                   << "\nvalue = " << metrics::frechet_proxy(a, b) << "\n";
        } else if (ev_metric == "reconstruction_mse") {
            if (ev_ckpt.empty() || ev_data.empty())
                throw ConfigError("reconstruction_mse needs --ckpt and --data");
            auto state = io::load_checkpoint(ev_ckpt);
            Tensor images = load_images(ev_data);
            Rng rng(seed);
            int t_sub = ev_tsub > 0 ? ev_tsub : state->cfg.T;
            report << "count = " << images.shape[0] << "\nvalue = "
                   << metrics::reconstruction_mse(*state, images, t_sub, rng)
                   << "\n";
        } else if (ev_metric == "nll_bpd") {
            if (ev_ckpt.empty() || ev_data.empty())
                throw ConfigError("nll_bpd needs --ckpt and --data");
            auto state = io::load_checkpoint(ev_ckpt);
            Tensor images = load_images(ev_data);
            Rng rng(seed);
            nn::ParamStore ema = state->ema_params();
            denoiser::Denoiser net(state->net->spec(), ema);
            Tensor z;
            if (state->conditional())
                z = state->encoder->encode_hard(images).values;
            auto fn = [&](const Tensor& x_t, int t) {
                return net.predict(x_t, t, state->conditional() ? &z : nullptr);
            };
            report << "count = " << images.shape[0] << "\nvalue = "
                   << diffusion::nll_bpd(images, fn, state->sched, rng) << "\n";
        } else {  // latent_usage
            if (ev_codes.empty()) throw ConfigError("latent_usage needs --codes");
            Tensor codes = io::load_codes(ev_codes);
            auto usage = metrics::latent_usage_stats(codes);
            report << "count = " << codes.shape[0] << "\n";
            for (size_t i = 0; i < usage.marginals.size(); ++i)
                report << "bit " << i << ": marginal = " << usage.marginals[i]
                       << ", entropy = " << usage.entropies[i] << "\n";
        }
        write_report(ev_f.out, report.str());
    });

    // --- fit-prior --------------------------------------------------------------
    auto* fp = app.add_subcommand("fit-prior",
                                  "fit the autoregressive code prior");
    CommonFlags fp_f;
    std::string fp_codes;
    fp->add_option("--codes", fp_codes, "codes file")->required();
    add_common(fp, fp_f, false);
    fp->callback([&] {
        uint64_t seed = resolve_seed(fp_f.seed);
        log_seed(seed);
        Tensor codes = io::load_codes(fp_codes);
        latent::ARPrior prior = latent::fit_ar_prior(codes);
        std::cout << "train log-likelihood (nats/code) = "
                  << prior.log_likelihood(codes) << "\n";
        if (!fp_f.out.empty()) io::save_ar_prior(prior, fp_f.out);
    });

    // --- fit-map ----------------------------------------------------------------
    auto* fm = app.add_subcommand("fit-map",
                                  "fit the cross-domain latent map");
    CommonFlags fm_f;
    std::string fm_src, fm_tgt;
    int fm_depth = 6;
    fm->add_option("--src-codes", fm_src, "source codes file")->required();
    fm->add_option("--tgt-codes", fm_tgt, "target codes file")->required();
    fm->add_option("--depth", fm_depth, "hidden layers");
    add_common(fm, fm_f, false);
    fm->callback([&] {
        uint64_t seed = resolve_seed(fm_f.seed);
        log_seed(seed);
        Tensor src = io::load_codes(fm_src);
        Tensor tgt = io::load_codes(fm_tgt);
        translate::MapFitOptions opt;
        opt.seed = seed;
        translate::MapFitResult result;
        auto map = translate::fit_latent_map(src, tgt, fm_depth, opt, &result);
        std::cout << "validation loss = " << result.validation_loss << "\n"
                  << "validation bit accuracy = "
                  << result.validation_bit_accuracy << "\n";
        if (!fm_f.out.empty()) io::save_latent_map(*map, fm_f.out);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const dmz::Error& e) {
        std::cerr << "error " << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error internal: " << e.what() << "\n";
        return 1;
    }
}
