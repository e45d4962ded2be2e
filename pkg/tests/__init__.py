"""
Unit tests for diffphy.

Test suite structure:
- test_neuralnet.py - Forward/backward passes, Adam, time embeddings
- test_diffusion.py - Schedules, forward jump, reverse steps, SNR alignment
- test_comms.py - QAM mapping, channels, demapping, BER and MI
- test_pipelines.py - Training and sweeps; -5 dB direction checks at default budget (slow)
- test_checkpoint.py - Checkpoint container round trip and corruption
- test_results.py - CSV emission, read-back and plots
- test_config.py - Config parsing, SNR grids, settings
- test_cli.py - Subcommands, exit codes, config echo
- test_utils.py - RNG stream keys, worker pool
"""
