"""Multi-session LiDAR map merging."""
