// SPDX-License-Identifier: Apache-2.0

#include "gradekit/cli.hpp"

int main(int argc, char** argv) { return gradekit::cli::run(argc, argv); }
