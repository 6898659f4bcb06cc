"""Secure federated submodel learning."""
