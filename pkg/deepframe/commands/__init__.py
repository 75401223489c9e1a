from . import bank_commands, learn_commands, oracle_commands, sample_commands

COMMAND_MODULES = [learn_commands, sample_commands, bank_commands, oracle_commands]

__all__ = ["COMMAND_MODULES"]
