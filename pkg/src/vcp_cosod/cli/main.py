#!/usr/bin/env python3
"""
凍結 Transformer へのコンセンサスプロンプト注入による共顕著物体検出

使用方法:
    vcp params --config config/vcp_default.toml --variants
    vcp make-toy --seed 0 --out toy/
    vcp train --config config/toy.toml --img-root toy/images --gt-root toy/masks --out run/
    vcp infer --config config/toy.toml --ckpt run/vcp_tunable.pt --group-dir toy/images/disk --out pred/disk
    vcp eval --pred pred/ --gt toy/masks --out report/
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .. import __version__
from ..core.config import Config
from ..data.group_parser import GroupDatasetParser
from ..data.toy_generator import synthesize_toy_dataset
from ..processors.evaluator import evaluate_dataset, print_eval_table, write_report
from ..processors.inferencer import Inferencer
from ..processors.param_report import print_param_table, report_params
from ..processors.trainer import Trainer


class VCPApp:
    """共顕著物体検出アプリケーション"""

    def __init__(self, config_path: Optional[str] = None, backbone: Optional[str] = None):
        """
        初期化

        Args:
            config_path: 設定ファイルのパス（省略時は既定値）
            backbone: バックボーン重みファイル（設定の backbone.weights を上書き）
        """
        overrides = {"backbone": {"weights": backbone}} if backbone else None
        self.config = Config(config_path, overrides)

    def display_config_info(self):
        """設定情報を表示"""
        mc = self.config.model_config
        print(f"バックボーン: {mc.backbone.arch}-{mc.backbone.variant} "
              f"(重み: {self.config.backbone_weights or '乱数初期化'})")
        print(f"CPG: r={mc.cpg.r} j={mc.cpg.j} k={mc.cpg.k} / "
              f"CPD: {mc.cpd.fusion}, {mc.cpd.mlp_sharing} / ヘッド: d={mc.head.d}")
        print(f"プロンプト注入ステージ: {[s + 1 for s in mc.tuned_stages]}")

    def train(self, img_root: str, gt_root: str, out_dir: str):
        """学習を実行してチェックポイントと損失ログを保存"""
        parser = GroupDatasetParser(img_root, gt_root)
        groups = parser.scan()
        info = parser.get_dataset_info(groups)
        self.display_config_info()
        print(f"データセット: {info['group_count']} グループ / {info['image_count']} 枚 "
              f"(グループサイズ {info['min_group_size']}〜{info['max_group_size']})")

        trainer = Trainer(self.config, groups)
        result = trainer.train(out_dir, show_progress=self.config.show_progress)
        print(f"\n学習完了: {len(result.loss_log)} ステップ")
        if result.loss_log:
            print(f"  損失: {result.initial_loss:.4f} -> {result.final_loss:.4f}")
        print(f"  チェックポイント: {result.checkpoint_path} ({result.checkpoint_bytes / 1e6:.1f} MB)")

    def infer(self, ckpt: str, out_dir: str, group_dir: Optional[str] = None, img_root: Optional[str] = None):
        """1グループ、またはルート以下の全グループを推論"""
        inferencer = Inferencer.from_checkpoint(ckpt, self.config)
        if group_dir:
            written = inferencer.infer_group(group_dir, out_dir)
            print(f"推論完了: {len(written)} 枚 -> {out_dir}")
        else:
            written = inferencer.infer_root(img_root, out_dir, show_progress=self.config.show_progress)
            print(f"推論完了: {len(written)} グループ / {sum(len(v) for v in written.values())} 枚 -> {out_dir}")

    def evaluate(self, pred_dir: str, gt_dir: str, out_dir: Optional[str] = None, name: Optional[str] = None):
        """評価して表を表示（out_dir 指定時は CSV も保存）"""
        record = evaluate_dataset(pred_dir, gt_dir, name, show_progress=self.config.show_progress)
        print_eval_table([record])
        if out_dir:
            written = write_report([record], out_dir)
            print(f"\n評価結果を保存しました: {written[0].parent}")

    def params(self, variants: bool = False):
        """学習可能パラメータ数の表を表示"""
        print_param_table(report_params(self.config.model_config, variants))


def make_toy(out_dir: str, seed: int, groups: int, images_per_group: int, size: int):
    dataset = synthesize_toy_dataset(out_dir, seed, groups, images_per_group, size)
    print(f"トイデータセットを生成しました: {len(dataset.group_names)} グループ × {images_per_group} 枚")
    print(f"  画像: {dataset.img_root}")
    print(f"  GT: {dataset.gt_root}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcp",
        description="コンセンサスプロンプトによる共顕著物体検出",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用例:
  %(prog)s params --variants                     # 既定構成とバリアントのパラメータ数
  %(prog)s make-toy --seed 0 --out toy/          # トイデータセットを生成
  %(prog)s train -c config/toy.toml --img-root toy/images --gt-root toy/masks --out run/
  %(prog)s eval --pred pred/ --gt toy/masks      # 評価
        """
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='デバッグログを表示')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument('-c', '--config', help='設定ファイル（TOML、省略時は既定値）')
        return p

    train = with_config(sub.add_parser('train', help='学習'))
    train.add_argument('--img-root', required=True, help='画像ルート（<root>/<group>/<stem>.jpg）')
    train.add_argument('--gt-root', required=True, help='GT ルート（<root>/<group>/<stem>.png）')
    train.add_argument('--backbone', help='バックボーン重みファイル（設定を上書き）')
    train.add_argument('--out', required=True, help='出力ディレクトリ')

    infer = with_config(sub.add_parser('infer', help='推論'))
    infer.add_argument('--ckpt', required=True, help='チェックポイント')
    target = infer.add_mutually_exclusive_group(required=True)
    target.add_argument('--group-dir', help='1グループ分の画像ディレクトリ')
    target.add_argument('--img-root', help='全グループを含む画像ルート')
    infer.add_argument('--backbone', help='バックボーン重みファイル（設定を上書き）')
    infer.add_argument('--out', required=True, help='出力ディレクトリ')

    evaluate = with_config(sub.add_parser('eval', help='評価'))
    evaluate.add_argument('--pred', required=True, help='予測マップのルート')
    evaluate.add_argument('--gt', required=True, help='GT マスクのルート')
    evaluate.add_argument('--name', help='データセット名（省略時は GT ディレクトリ名）')
    evaluate.add_argument('--out', help='CSV の出力ディレクトリ')

    params = with_config(sub.add_parser('params', help='学習可能パラメータ数の表示'))
    params.add_argument('--variants', action='store_true', help='比較用バリアントも表示')

    toy = sub.add_parser('make-toy', help='トイデータセットの生成')
    toy.add_argument('--seed', type=int, default=0)
    toy.add_argument('--groups', type=int, default=6)
    toy.add_argument('--images-per-group', type=int, default=12)
    toy.add_argument('--size', type=int, default=96)
    toy.add_argument('--out', required=True, help='出力ディレクトリ')
    return parser


def main(argv: Optional[List[str]] = None):
    """メイン関数"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == 'make-toy':
            make_toy(args.out, args.seed, args.groups, args.images_per_group, args.size)
            return
        app = VCPApp(args.config, getattr(args, 'backbone', None))
        if args.command == 'train':
            app.train(args.img_root, args.gt_root, args.out)
        elif args.command == 'infer':
            app.infer(args.ckpt, args.out, group_dir=args.group_dir, img_root=args.img_root)
        elif args.command == 'eval':
            app.evaluate(args.pred, args.gt, args.out, args.name)
        elif args.command == 'params':
            app.params(args.variants)
    except KeyboardInterrupt:
        print("\n処理が中断されました")
        sys.exit(1)
    except Exception as e:
        print(f"エラーが発生しました: {e}")
        logging.getLogger(__name__).debug("詳細", exc_info=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
