#include "mpmae/cli/cli.hpp"

int main(int argc, char** argv) { return mpmae::cli::dispatch(argc, argv); }
