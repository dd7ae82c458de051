import json
import os

from atgcn.run_manifest import RUN_MANIFEST_NAME, read_run_manifest, write_run_manifest
from atgcn.utils import file_sha256


class TestRunManifest:

    def test_written_and_read_back(self, tmpdir):
        out_dir = str(tmpdir)
        data = os.path.join(out_dir, 'cycles.csv')
        with open(data, 'w') as f:
            f.write('video_id\nv1\n')
        missing = os.path.join(out_dir, 'never_written.csv')
        path = write_run_manifest(out_dir, ['cycles', '--out', out_dir], 'cycles', {'seed': 3, 'length': 60}, 3,
                                  inputs=[missing], artifacts=[data])
        assert path == os.path.join(out_dir, RUN_MANIFEST_NAME)
        manifest = read_run_manifest(out_dir)
        assert list(manifest.keys()) == ['argv', 'subcommand', 'seed', 'config', 'inputs', 'artifacts']
        assert manifest['subcommand'] == 'cycles'
        assert manifest['config'] == {'seed': 3, 'length': 60}
        assert manifest['inputs'] == {}
        assert manifest['artifacts'] == {data: file_sha256(data)}

    def test_plain_json(self, tmpdir):
        write_run_manifest(str(tmpdir), [], 'graph', {}, 0)
        with open(os.path.join(str(tmpdir), RUN_MANIFEST_NAME)) as f:
            assert json.load(f)['seed'] == 0
