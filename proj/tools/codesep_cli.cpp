// codesep: command line front end.
//
// Subcommands: synth-data, train, baseline, pack, unpack, separate, eval.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime or
// numerical abort.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include "codesep/bitstream.hpp"
#include "codesep/checkpoint.hpp"
#include "codesep/errors.hpp"
#include "codesep/metrics.hpp"
#include "codesep/pipeline.hpp"
#include "codesep/synth.hpp"
#include "codesep/train.hpp"
#include "codesep/wav.hpp"

namespace {

using namespace codesep;

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

app::TrainConfig load_stage_config(const std::string& path, const std::string& expected_stage) {
  auto cfg = app::load_train_config(path);
  if (cfg.stage != expected_stage) {
    throw ConfigError("config file '" + path + "' is for stage '" + cfg.stage +
                      "', but stage '" + expected_stage + "' was requested");
  }
  return cfg;
}

void run_stage(const app::TrainConfig& cfg) {
  const auto res = app::train(cfg);
  std::cout << "stage " << cfg.stage << ": " << res.steps << " steps, loss " << res.first_loss
            << " -> " << res.final_loss << "\n"
            << "checkpoint: " << res.checkpoint_path << "\n";
}

void print_report(const metrics::EvalReport& r) {
  std::cout << "mode " << r.mode << ", " << r.utterances.size() << " mixtures, "
            << r.bitrate_total_bps << " b/s total (" << r.bitrate_per_stream_bps
            << " per stream)\n"
            << "  mean PIT SI-SDR      " << r.mean_pit_si_sdr_db << " dB\n"
            << "  mean improvement     " << r.mean_improvement_db << " dB\n"
            << "  mean mel distance    " << r.mean_mel_distance << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CodeSep: joint two-speaker separation and low-bitrate neural coding"};
  app.require_subcommand(1);

  // synth-data
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate the synthetic toy corpus");
  std::string sd_out;
  int sd_speakers = 8;
  int sd_utts = 25;
  double sd_duration = 1.0;
  std::uint64_t sd_seed = 1234;
  int sd_rate = 8000;
  synth_cmd->add_option("--out-dir", sd_out, "Dataset root to create")->required();
  synth_cmd->add_option("--speakers", sd_speakers, "Number of toy speakers");
  synth_cmd->add_option("--utterances-per-speaker", sd_utts, "Utterances per speaker");
  synth_cmd->add_option("--duration", sd_duration, "Utterance length in seconds");
  synth_cmd->add_option("--seed", sd_seed, "Corpus seed");
  synth_cmd->add_option("--sample-rate", sd_rate, "Sample rate in Hz");
  synth_cmd->callback([&] {
    const auto m = synth::build_datasets(sd_out, sd_speakers, sd_utts, sd_duration, sd_seed,
                                         sd_rate);
    std::cout << "wrote " << m.singles.size() << " single utterances and " << m.mixtures.size()
              << " mixtures under " << sd_out << "\n";
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one stage from a JSON config");
  std::string tr_stage;
  std::string tr_config;
  train_cmd->add_option("--stage", tr_stage, "codec | btd | atsp")
      ->required()
      ->check(CLI::IsMember({"codec", "btd", "atsp"}));
  train_cmd->add_option("--config", tr_config, "JSON config file")->required();
  train_cmd->callback([&] { run_stage(load_stage_config(tr_config, tr_stage)); });

  // baseline
  auto* base_cmd = app.add_subcommand("baseline", "Train the baseline mask separator");
  std::string bl_config;
  base_cmd->add_option("--config", bl_config, "JSON config file (stage \"separator\")")
      ->required();
  base_cmd->callback([&] { run_stage(load_stage_config(bl_config, "separator")); });

  // pack
  auto* pack_cmd = app.add_subcommand("pack", "Encode a mixture into a CSTK token file");
  std::string pk_in, pk_codec, pk_btd, pk_out;
  pack_cmd->add_option("--in", pk_in, "Mixture WAV")->required();
  pack_cmd->add_option("--codec", pk_codec, "Codec checkpoint")->required();
  pack_cmd->add_option("--btd", pk_btd, "BTD checkpoint")->required();
  pack_cmd->add_option("--out", pk_out, "Output .cstk path")->required();
  pack_cmd->callback([&] {
    const auto codec_model = app::load_codec(pk_codec);
    const auto btd_model = app::load_btd(pk_btd);
    const auto y = wav::read(pk_in);
    const auto ts = pipeline::jsac_encode(y, btd_model, codec_model);
    write_bytes(pk_out, bitstream::pack(ts));
    std::cout << "packed " << ts.streams.size() << " streams x "
              << (ts.streams.empty() ? 0 : ts.streams[0].size()) << " tokens at "
              << pipeline::jsac_bitrate_bps(codec_model) << " b/s per stream -> " << pk_out
              << "\n";
  });

  // unpack
  auto* unpack_cmd = app.add_subcommand("unpack", "Decode a CSTK token file into two WAVs");
  std::string up_in, up_codec, up_atsp, up_dir;
  unpack_cmd->add_option("--in", up_in, "Input .cstk path")->required();
  unpack_cmd->add_option("--codec", up_codec, "Codec checkpoint")->required();
  unpack_cmd->add_option("--atsp", up_atsp, "ATSP checkpoint")->required();
  unpack_cmd->add_option("--out-dir", up_dir, "Directory for stream1.wav / stream2.wav")
      ->required();
  unpack_cmd->callback([&] {
    const auto codec_model = app::load_codec(up_codec);
    const auto atsp_model = app::load_atsp(up_atsp);
    const auto ts = bitstream::unpack(read_bytes(up_in));
    const auto streams = pipeline::jsac_decode(ts, atsp_model, codec_model);
    std::filesystem::create_directories(up_dir);
    wav::write(up_dir + "/stream1.wav", streams[0]);
    wav::write(up_dir + "/stream2.wav", streams[1]);
    std::cout << "decoded " << ts.streams.size() << " streams -> " << up_dir << "\n";
  });

  // separate
  auto* sep_cmd = app.add_subcommand("separate", "Separate a mixture (encode + decode)");
  std::string sp_in, sp_codec, sp_btd, sp_atsp, sp_dir;
  sep_cmd->add_option("--in", sp_in, "Mixture WAV")->required();
  sep_cmd->add_option("--codec", sp_codec, "Codec checkpoint")->required();
  sep_cmd->add_option("--btd", sp_btd, "BTD checkpoint")->required();
  sep_cmd->add_option("--atsp", sp_atsp, "ATSP checkpoint")->required();
  sep_cmd->add_option("--out-dir", sp_dir, "Output directory")->required();
  sep_cmd->callback([&] {
    const auto codec_model = app::load_codec(sp_codec);
    const auto btd_model = app::load_btd(sp_btd);
    const auto atsp_model = app::load_atsp(sp_atsp);
    const auto y = wav::read(sp_in);
    const auto ts = pipeline::jsac_encode(y, btd_model, codec_model);
    const auto streams = pipeline::jsac_decode(ts, atsp_model, codec_model);
    std::filesystem::create_directories(sp_dir);
    write_bytes(sp_dir + "/tokens.cstk", bitstream::pack(ts));
    wav::write(sp_dir + "/stream1.wav", streams[0]);
    wav::write(sp_dir + "/stream2.wav", streams[1]);
    std::cout << "separated " << sp_in << " -> " << sp_dir
              << " (stream1.wav, stream2.wav, tokens.cstk)\n";
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score one mode over a dataset split");
  std::string ev_mode, ev_data, ev_split = "test";
  std::string ev_codec, ev_btd, ev_atsp, ev_sep, ev_out;
  double ev_bitrate = 0.0;
  int ev_limit = 0;
  bool ev_oracle = false;
  eval_cmd->add_option("--mode", ev_mode, "jsac | fcts | fstc")->required();
  eval_cmd->add_option("--bitrate", ev_bitrate, "Target total rate in b/s (baselines)");
  eval_cmd->add_option("--data-dir", ev_data, "synth-data root")->required();
  eval_cmd->add_option("--split", ev_split, "Dataset split (default test)");
  eval_cmd->add_option("--codec", ev_codec, "Codec checkpoint")->required();
  eval_cmd->add_option("--btd", ev_btd, "BTD checkpoint (jsac)");
  eval_cmd->add_option("--atsp", ev_atsp, "ATSP checkpoint (jsac)");
  eval_cmd->add_option("--separator", ev_sep, "Separator checkpoint (baselines)");
  eval_cmd->add_flag("--oracle-separator", ev_oracle,
                     "Use the ground-truth sources as the separator");
  eval_cmd->add_option("--limit", ev_limit, "Evaluate at most this many mixtures (0 = all)");
  eval_cmd->add_option("--out", ev_out, "Write the JSON report here");
  eval_cmd->callback([&] {
    const auto mode = pipeline::mode_from_string(ev_mode);
    auto mixtures = app::load_mixture_split(ev_data, ev_split);
    if (ev_limit > 0 && static_cast<int>(mixtures.size()) > ev_limit) {
      mixtures.resize(static_cast<std::size_t>(ev_limit));
    }

    const auto codec_model = app::load_codec(ev_codec);
    pipeline::EvalModels models;
    models.codec = &codec_model;
    models.oracle_separator = ev_oracle;

    std::optional<btd::BtdModel> btd_model;
    std::optional<atsp::AtspModel> atsp_model;
    std::optional<pipeline::MaskSeparator> sep_model;
    if (mode == pipeline::Mode::kJsac) {
      if (ev_btd.empty() || ev_atsp.empty()) {
        throw ConfigError("eval: jsac mode needs --btd and --atsp checkpoints");
      }
      btd_model.emplace(app::load_btd(ev_btd));
      atsp_model.emplace(app::load_atsp(ev_atsp));
      models.btd = &*btd_model;
      models.atsp = &*atsp_model;
    } else if (!ev_oracle) {
      if (ev_sep.empty()) {
        throw ConfigError("eval: " + ev_mode +
                          " mode needs --separator or --oracle-separator");
      }
      sep_model.emplace(app::load_separator(ev_sep));
      models.separator = &*sep_model;
    }

    const auto report = pipeline::evaluate(mode, mixtures, models, ev_bitrate);
    print_report(report);
    if (!ev_out.empty()) {
      std::ofstream out(ev_out);
      if (!out) throw DataError("cannot create '" + ev_out + "'");
      out << metrics::to_json(report) << "\n";
      std::cout << "report: " << ev_out << "\n";
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
