#include "gatenas/cli.hpp"

int main(int argc, char** argv)
{
    return gatenas::run_command(argc, argv);
}
