"""Network-based world: numpy MLPs, PPO, AIRL and KL-regularized system optimization."""
