class TrainerError(Exception):
    """Raised for malformed patch inputs or inconsistent training setups."""
