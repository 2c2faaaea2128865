#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <exception>

#include "pcnet/cli.hpp"

namespace {

void add_common(CLI::App* cmd, pcnet::RunConfig& rc) {
  cmd->add_option("--seed", rc.seed, "Random seed");
  cmd->add_option("--out", rc.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  pcnet::RunConfig rc;
  CLI::App app{"High-resolution superpixel segmentation: training, inference and evaluation"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");

  auto* train = app.add_subcommand("train", "Train a model on a dataset manifest");
  add_common(train, rc);
  train->add_option("--manifest", rc.manifest, "Dataset manifest");
  train->add_option("--cells", rc.cells, "Superpixel cell size at output resolution");
  train->add_flag("--paper-scale", rc.paper_scale, "Use the full-scale hyper-parameters instead of the desk preset");
  train->add_option("--iterations", rc.iterations, "Override the number of steps");
  train->add_option("--batch-size", rc.batch_size, "Override the batch size");
  train->add_option("--input-size", rc.input_size, "Network input side; crops are 4x and resizes 6x this");
  train->add_flag("--resume", rc.resume, "Continue from the checkpoint in --out");
  train->add_flag("--dry-run", rc.dry_run, "Print the effective configuration and exit");

  auto* infer = app.add_subcommand("infer", "Superpixels for one image");
  add_common(infer, rc);
  infer->add_option("--checkpoint", rc.checkpoint, "Model checkpoint")->required();
  infer->add_option("--image", rc.image, "Input PNG")->required();
  infer->add_option("--cells", rc.cells, "Superpixel cell size at output resolution");

  auto* eval = app.add_subcommand("eval", "Boundary recall / precision curve over a dataset");
  add_common(eval, rc);
  eval->add_option("--checkpoint", rc.checkpoint, "Model checkpoint")->required();
  eval->add_option("--manifest", rc.manifest, "Dataset manifest")->required();
  eval->add_option("--counts", rc.counts, "Ascending target superpixel counts")->delimiter(',');
  eval->add_option("--tol", rc.tol, "Match tolerance in pixels (default: 0.25% of the diagonal)");
  eval->add_option("--cells", rc.cells, "Superpixel cell size at output resolution");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled dataset");
  add_common(synth, rc);
  synth->add_option("--count", rc.synth.n_images, "Number of images");
  synth->add_option("--size", rc.synth.size, "Image side (multiple of 16)");
  synth->add_option("--classes", rc.synth.n_classes, "Number of classes");
  std::string family = "rectangles";
  synth->add_option("--family", family, "rectangles | ellipses | voronoi");
  synth->add_option("--noise", rc.synth.noise, "Uniform noise amplitude");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable primitive");

  auto* tile = app.add_subcommand("tile", "Divide-and-conquer baseline on k x k tiles");
  add_common(tile, rc);
  tile->add_option("--checkpoint", rc.checkpoint, "Model checkpoint")->required();
  tile->add_option("--image", rc.image, "Input PNG")->required();
  tile->add_option("--tiles", rc.tiles, "Tiles per axis")->check(CLI::PositiveNumber);
  tile->add_option("--cells", rc.cells, "Superpixel cell size at output resolution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(pcnet::ExitCode::usage);
  }

  auto logger = spdlog::stderr_color_mt("pcnet");
  spdlog::set_default_logger(logger);
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  for (auto* sub : {train, infer, eval, synth, grad, tile})
    if (sub->parsed()) rc.command = sub->get_name();
  try {
    if (rc.command == "synth") rc.synth.family = pcnet::parse_shape_family(family);
    return pcnet::run_command(rc);
  } catch (const pcnet::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(pcnet::ExitCode::data);
  }
}
