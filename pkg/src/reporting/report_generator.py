"""
Report Generator
Training-history curves and prediction overlays
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns


def _style():
    sns.set_style("darkgrid")
    plt.rcParams['figure.figsize'] = (12, 8)


def plot_history(history: pd.DataFrame, save_path) -> Path:
    """
    Plot loss and Dice curves of a training run

    Args:
        history: Rows with epoch, loss, train_dsc and optionally val_dsc
        save_path: PNG target
    """
    _style()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(12, 9), sharex=True)

    ax1.plot(history['epoch'], history['loss'], linewidth=2, color='#2E86AB', label='Total loss')
    ax1.set_title('Training Loss', fontsize=16, fontweight='bold')
    ax1.set_ylabel('Loss', fontsize=12)
    ax1.set_yscale('log')
    ax1.legend(fontsize=10)

    ax2.plot(history['epoch'], history['train_dsc'], linewidth=2, color='#18A558', label='Train DSC')
    if 'val_dsc' in history.columns:
        ax2.plot(history['epoch'], history['val_dsc'], linewidth=2, color='#A23B72', label='Val DSC')
    ax2.set_title('Foreground Dice', fontsize=16, fontweight='bold')
    ax2.set_xlabel('Epoch', fontsize=12)
    ax2.set_ylabel('DSC', fontsize=12)
    ax2.set_ylim(0.0, 1.0)
    ax2.legend(fontsize=10)

    plt.tight_layout()
    save_path = Path(save_path)
    fig.savefig(save_path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    print(f"  💾 Saved training curves to: {save_path}")
    return save_path


def plot_overlay(grey: np.ndarray, labels: np.ndarray, num_classes: int, save_path) -> Path:
    """Image, predicted labels and their blend side by side"""
    _style()
    palette = np.array(sns.color_palette("tab10", max(num_classes, 2)))
    colors = palette[labels % len(palette)]
    colors[labels == 0] = 0.0
    base = np.repeat((grey.astype(np.float64) / 255.0)[..., None], 3, axis=2)
    blend = np.where(labels[..., None] > 0, 0.55 * base + 0.45 * colors, base)

    fig, axes = plt.subplots(1, 3, figsize=(15, 5))
    for ax, img, title in zip(axes, (base, colors, blend), ('Image', 'Prediction', 'Overlay')):
        ax.imshow(img, interpolation='nearest')
        ax.set_title(title, fontsize=14, fontweight='bold')
        ax.axis('off')

    plt.tight_layout()
    save_path = Path(save_path)
    fig.savefig(save_path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    print(f"  💾 Saved prediction overlay to: {save_path}")
    return save_path
